use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use localblur_core::capture_sim::{Degradation, SceneSpec, SimPair, SimScene, SpriteShape};
use localblur_core::{io, BayerPattern, Frame};
use serde::Serialize;

use super::{create_dir, parse_pair, save_mask};
use crate::config::Config;
use crate::manifest::{CameraPaths, PairPaths, SceneManifest, MANIFEST_VERSION};
use crate::report::{write_json, CmdResult, Failure, ReportSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    /// 32-bit float PFM.
    Pfm,
    /// 16-bit PNG.
    Png,
}

impl FileFormat {
    fn ext(self) -> &'static str {
        match self {
            FileFormat::Pfm => "pfm",
            FileFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Square,
    Disc,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory; receives frames, masks, truth.json and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Pairs with a moving sprite.
    #[arg(long)]
    pub targets: Option<usize>,
    /// Frames averaged into each long exposure.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub shape: Option<ShapeArg>,
    /// Emit RAW mosaics in this CFA pattern (RGGB, BGGR, GRBG, GBRG).
    #[arg(long, value_name = "PATTERN")]
    pub raw: Option<BayerPattern>,
    /// Inject a color cast, a brightness mismatch and a 3 px misalignment.
    #[arg(long)]
    pub degrade: bool,
    /// Inject random color casts on both cameras.
    #[arg(long)]
    pub cast: bool,
    /// Inject a random channel gain on the blurred camera.
    #[arg(long)]
    pub brightness: bool,
    /// Blurred camera displacement `DX,DY` in pixels (|d| <= 8).
    #[arg(long, value_name = "DX,DY", value_parser = parse_pair, allow_hyphen_values = true)]
    pub misalign: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = FileFormat::Pfm)]
    pub format: FileFormat,
}

#[derive(Serialize)]
struct SimulateReport {
    manifest: String,
    spec: SceneSpec,
    gain: [f64; 3],
    expected_beta: [f64; 3],
    misalignment: (f64, f64),
    color_cast: bool,
    mask_area_fractions: Vec<f64>,
}

pub fn spec_from(args: &SimulateArgs, cfg: &Config) -> SceneSpec {
    let mut spec = cfg.simulate.clone();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { spec.$f = v; })* };
    }
    set!(width, height, targets, frames, seed);
    if let Some(s) = args.shape {
        spec.shape = Some(match s {
            ShapeArg::Square => SpriteShape::Square,
            ShapeArg::Disc => SpriteShape::Disc,
        });
    }
    if args.raw.is_some() {
        spec.raw = args.raw;
    }
    if args.degrade {
        spec.degradation = Degradation::full();
    }
    if args.cast {
        spec.degradation.color_cast = true;
    }
    if args.brightness {
        spec.degradation.brightness = true;
    }
    if let Some(d) = args.misalign {
        spec.degradation.misalignment = d;
    }
    spec
}

fn write_frame(f: &Frame, dir: &Path, name: &str, fmt: FileFormat) -> anyhow::Result<PathBuf> {
    let file = PathBuf::from(format!("{name}.{}", fmt.ext()));
    let path = dir.join(&file);
    io::save_frame(f, &path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(file)
}

fn write_pair(
    p: &SimPair,
    dir: &Path,
    id: &str,
    fmt: FileFormat,
    mask: bool,
) -> anyhow::Result<PairPaths> {
    let gt_mask = if mask {
        let file = PathBuf::from(format!("{id}_mask.png"));
        save_mask(&p.gt_mask, &dir.join(&file))?;
        Some(file)
    } else {
        None
    };
    Ok(PairPaths {
        id: Some(id.to_string()),
        blurred: write_frame(&p.blurred, dir, &format!("{id}_blurred"), fmt)?,
        sharp: write_frame(&p.sharp, dir, &format!("{id}_sharp"), fmt)?,
        gt_mask,
    })
}

pub fn run(args: SimulateArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let spec = spec_from(&args, cfg);
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let scene = SimScene::generate(&spec)?;
    create_dir(&args.out)?;
    let dir = args.out.as_path();
    let fmt = args.format;
    let write = || -> anyhow::Result<SceneManifest> {
        let targets = scene
            .targets
            .iter()
            .enumerate()
            .map(|(i, p)| write_pair(p, dir, &format!("t{i:02}"), fmt, true))
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(SceneManifest {
            schema_version: MANIFEST_VERSION,
            lightbox: Some(CameraPaths {
                blurred: write_frame(&scene.lightbox_blur, dir, "lightbox_blurred", fmt)?,
                sharp: write_frame(&scene.lightbox_sharp, dir, "lightbox_sharp", fmt)?,
            }),
            calibration: None,
            grid: Some(scene.truth.grid),
            static_pair: write_pair(&scene.static_pair, dir, "static", fmt, false)?,
            reference_pair: None,
            target_pairs: targets,
        })
    };
    let manifest = write()?;
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    write_json(&dir.join("truth.json"), &scene.truth)?;
    sink.emit(
        "simulate",
        &SimulateReport {
            manifest: manifest_path.display().to_string(),
            spec: spec.clone(),
            gain: scene.truth.gain,
            expected_beta: scene.truth.expected_beta,
            misalignment: scene.truth.misalignment,
            color_cast: scene.truth.cast_blur.is_some(),
            mask_area_fractions: scene
                .targets
                .iter()
                .map(|t| t.gt_mask.area_fraction())
                .collect(),
        },
    )
}
