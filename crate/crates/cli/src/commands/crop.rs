use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use localblur_core::sampler::{augment, BapcSampler, Branch, MaskIntegral, PatchSpec};
use serde::Serialize;

use super::load_mask;
use crate::config::Config;
use crate::report::{CmdResult, ReportSink};

#[derive(Debug, Args)]
pub struct CropArgs {
    /// Blur mask of the source image.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Patch side; defaults to the configured sampler patch size.
    #[arg(long)]
    pub size: Option<usize>,
    /// Identifier copied into every output row.
    #[arg(long)]
    pub image_id: Option<String>,
    /// Draw random horizontal and vertical flips.
    #[arg(long)]
    pub augment: bool,
    /// JSON Lines file receiving one patch per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CropRow<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    image_id: Option<&'a str>,
    draw: u64,
    #[serde(flatten)]
    spec: PatchSpec,
    branch: Branch,
    blur_pixels: u64,
}

#[derive(Serialize)]
struct CropReport {
    count: u64,
    size: usize,
    mask_area_fraction: f64,
    /// Fraction of patches holding at least one mask-positive pixel.
    blur_fraction: f64,
    /// Fraction of draws that took the blur branch.
    blur_branch_frequency: f64,
    out: Option<String>,
}

pub fn run(args: CropArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let mask = load_mask(&args.mask)?;
    let size = args.size.unwrap_or(cfg.sampler.patch_size);
    let sampler = BapcSampler::new(mask.width(), mask.height(), &mask, size)?;
    let integral = MaskIntegral::new(&mask);
    let mut writer = match &args.out {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => None,
    };
    let (mut with_blur, mut blur_branch) = (0u64, 0u64);
    for draw in 0..args.count {
        let mut rng = BapcSampler::rng(args.seed, draw);
        let mut d = sampler.sample_with(&mut rng);
        if args.augment {
            d.spec = augment(d.spec, &mut rng);
        }
        let blur_pixels = integral.count(d.spec.x, d.spec.y, size);
        with_blur += u64::from(blur_pixels > 0);
        blur_branch += u64::from(d.branch == Branch::Blur);
        if let Some(w) = writer.as_mut() {
            let row = CropRow {
                image_id: args.image_id.as_deref(),
                draw,
                spec: d.spec,
                branch: d.branch,
                blur_pixels,
            };
            serde_json::to_writer(&mut *w, &row).context("cannot serialize patch")?;
            w.write_all(b"\n").context("cannot write patch list")?;
        }
    }
    if let Some(mut w) = writer {
        w.flush().context("cannot write patch list")?;
    }
    let n = args.count.max(1) as f64;
    sink.emit(
        "crop",
        &CropReport {
            count: args.count,
            size,
            mask_area_fraction: mask.area_fraction(),
            blur_fraction: with_blur as f64 / n,
            blur_branch_frequency: blur_branch as f64 / n,
            out: args.out.as_ref().map(|p| p.display().to_string()),
        },
    )
}
