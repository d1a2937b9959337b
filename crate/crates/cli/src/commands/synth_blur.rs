use std::path::PathBuf;

use clap::{Args, ValueEnum};
use localblur_core::synthblur::{synth_local_blur, SynthBlurParams};
use serde::Serialize;

use super::{load_image, load_mask, save_image, save_mask};
use crate::config::Config;
use crate::report::{CmdResult, ReportSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Translation,
    Rotation,
}

#[derive(Debug, Args)]
pub struct SynthBlurArgs {
    /// Sharp source image.
    #[arg(long)]
    pub image: PathBuf,
    /// Foreground mask selecting the region to blur.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Translation)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub dy: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub degrees: f64,
    /// Intermediate positions averaged along the motion.
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    /// Skip the 5×5 box kernel.
    #[arg(long)]
    pub no_kernel: bool,
    /// Apply the box kernel before motion averaging.
    #[arg(long)]
    pub kernel_first: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the blurred footprint mask.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SynthBlurReport {
    out: String,
    params: SynthBlurParams,
    footprint_area_fraction: f64,
    empty_mask: bool,
}

pub fn run(args: SynthBlurArgs, _cfg: &Config, sink: &ReportSink) -> CmdResult {
    let mut params = match args.mode {
        ModeArg::Translation => SynthBlurParams::translation(args.dx, args.dy, args.steps),
        ModeArg::Rotation => SynthBlurParams::rotation(args.degrees, args.steps),
    };
    params.kernel = !args.no_kernel;
    params.kernel_first = args.kernel_first;
    let sharp = load_image(&args.image)?;
    let mask = load_mask(&args.mask)?;
    let out = synth_local_blur(&sharp, &mask, &params)?;
    save_image(&out.image, &args.out)?;
    if let Some(p) = &args.mask_out {
        save_mask(&out.footprint, p)?;
    }
    sink.emit(
        "synth-blur",
        &SynthBlurReport {
            out: args.out.display().to_string(),
            params,
            footprint_area_fraction: out.footprint.area_fraction(),
            empty_mask: out.empty_mask,
        },
    )
}
