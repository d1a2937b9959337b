use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use localblur_bench::{degraded_scene, texture};
use localblur_core::geoalign::{estimate_flow, warp};
use localblur_core::lbfmg::{lbfmg_generate, LbfmgParams, MaskScene, PairView};
use localblur_core::losses::{total_loss, LossWeights, MSFR_LEVELS};
use localblur_core::metrics::{evaluate_pair, AlignOptions};
use localblur_core::pipeline::{run_pipeline, PipelineConfig, PipelineInput};
use localblur_core::synthblur::{synth_local_blur, SynthBlurParams};
use localblur_core::{pyramid, shift, BlurMask};

fn flow(c: &mut Criterion) {
    let a = texture(512, 384);
    let b = shift(&a, 3, 0).unwrap().image;
    c.bench_function("estimate_flow 512x384", |bench| {
        bench.iter(|| estimate_flow(black_box(&a), black_box(&b)).unwrap())
    });
    let f = estimate_flow(&a, &b).unwrap();
    c.bench_function("warp 512x384", |bench| {
        bench.iter(|| warp(black_box(&b), &f).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let scene = degraded_scene(512, 384, 2);
    let input = PipelineInput::from_scene(&scene).unwrap();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("run_pipeline 512x384 x3 pairs", |bench| {
        bench.iter(|| run_pipeline(black_box(&input), &PipelineConfig::default()).unwrap())
    });
    g.finish();
}

fn masks(c: &mut Criterion) {
    let scene = degraded_scene(320, 240, 3);
    let rgb: Vec<_> = scene
        .targets
        .iter()
        .map(|t| (t.sharp.as_rgb().unwrap(), t.blurred.as_rgb().unwrap()))
        .collect();
    let st = (
        scene.static_pair.sharp.as_rgb().unwrap(),
        scene.static_pair.blurred.as_rgb().unwrap(),
    );
    let view = |p: &(&_, &_)| PairView {
        sharp: p.0,
        blurred: p.1,
    };
    let ms = MaskScene {
        static_pair: Some(view(&st)),
        target: view(&rgb[0]),
        others: rgb[1..].iter().map(view).collect(),
    };
    let mut g = c.benchmark_group("lbfmg");
    g.sample_size(20);
    g.bench_function("lbfmg_generate 320x240", |bench| {
        bench.iter(|| lbfmg_generate(black_box(&ms), &LbfmgParams::default()).unwrap())
    });
    g.finish();

    let img = texture(320, 240);
    let fg = BlurMask::from_predicate(320, 240, |x, y| {
        (100..160).contains(&x) && (80..140).contains(&y)
    });
    c.bench_function("synth_local_blur 320x240", |bench| {
        bench.iter(|| {
            synth_local_blur(
                black_box(&img),
                &fg,
                &SynthBlurParams::translation(30.0, 10.0, 30),
            )
            .unwrap()
        })
    });
}

fn scoring(c: &mut Criterion) {
    let a = texture(256, 256);
    let b = shift(&a, 1, 2).unwrap().image;
    let m = BlurMask::ones(256, 256);
    let (pa, pb) = (pyramid(&a, MSFR_LEVELS), pyramid(&b, MSFR_LEVELS));
    c.bench_function("total_loss 256x256", |bench| {
        bench.iter(|| total_loss(black_box(&pa), &pb, &m, &m, &LossWeights::default()).unwrap())
    });
    c.bench_function("evaluate_pair 256x256", |bench| {
        bench.iter(|| evaluate_pair(black_box(&a), &b, &m, &AlignOptions::default()).unwrap())
    });
}

criterion_group!(benches, flow, pipeline, masks, scoring);
criterion_main!(benches);
