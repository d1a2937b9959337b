use std::path::PathBuf;

use clap::Args;
use localblur_core::calib::PatchGrid;
use localblur_core::pipeline::calibrate_frame;
use localblur_core::Frame;
use serde::Serialize;

use super::{load_frame, parse_grid};
use crate::config::Config;
use crate::report::{write_json, CmdResult, Failure, ReportSink};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Lightbox capture (PFM, PNG, or RAW with a `.meta` sidecar).
    #[arg(long)]
    pub lightbox: PathBuf,
    /// Patch grid as `COLSxROWS`.
    #[arg(long, value_parser = parse_grid, default_value = "10x8")]
    pub grid: (usize, usize),
    /// Patch side in pixels; defaults to 1 for RGB and 2 for RAW.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Row-major index of the reference patch; defaults to the center.
    #[arg(long)]
    pub target: Option<usize>,
    /// Where to write the fitted calibration JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CalibrateReport {
    out: String,
    grid: PatchGrid,
    residual_rms: [f64; 3],
    samples: [usize; 3],
    alpha_min: f64,
    alpha_max: f64,
}

pub fn run(args: CalibrateArgs, _cfg: &Config, sink: &ReportSink) -> CmdResult {
    let (cols, rows) = args.grid;
    if cols == 0 || rows == 0 {
        return Err(Failure::usage(format!(
            "grid must be nonempty, got {cols}x{rows}"
        )));
    }
    let frame = load_frame(&args.lightbox)?;
    let size = args
        .patch_size
        .unwrap_or(if matches!(frame, Frame::Raw(_)) { 2 } else { 1 });
    let mut grid = PatchGrid::centered(cols, rows, size);
    if let Some(t) = args.target {
        if t >= grid.count() {
            return Err(Failure::usage(format!(
                "target {t} outside a {cols}x{rows} grid"
            )));
        }
        grid.target = t;
    }
    let cal = calibrate_frame(&frame, &grid)?;
    write_json(&args.out, &cal)?;
    let (alpha_min, alpha_max) = cal.alpha_range();
    sink.emit(
        "calibrate-color",
        &CalibrateReport {
            out: args.out.display().to_string(),
            grid,
            residual_rms: cal.residual_rms,
            samples: cal.samples,
            alpha_min,
            alpha_max,
        },
    )
}
