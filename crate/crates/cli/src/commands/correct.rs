use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use localblur_core::calib::{self, ColorCalibration, PhotometricGain};
use localblur_core::pipeline::{apply_frame_gain, correct_frame};
use localblur_core::{io, Frame};
use serde::Serialize;

use super::{load_frame, parse_triple};
use crate::config::Config;
use crate::report::{CmdResult, Failure, ReportSink};

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Color calibration JSON from `calibrate-color`.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Per-channel gain `R,G,B` applied after color correction.
    #[arg(long, value_parser = parse_triple)]
    pub gain: Option<[f64; 3]>,
    /// Undo instead of apply: divide by the gain, then reintroduce the cast.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CorrectReport {
    out: String,
    width: usize,
    height: usize,
    raw: bool,
    inverse: bool,
    alpha_range: Option<(f64, f64)>,
    gain: Option<[f64; 3]>,
}

fn remove(f: &Frame, cal: &ColorCalibration) -> localblur_core::Result<Frame> {
    Ok(match f {
        Frame::Rgb(i) => Frame::Rgb(calib::remove_correction(i, cal)?),
        Frame::Raw(r) => Frame::Raw(calib::remove_correction_raw(r, cal)?),
    })
}

pub fn run(args: CorrectArgs, _cfg: &Config, sink: &ReportSink) -> CmdResult {
    if args.calib.is_none() && args.gain.is_none() {
        return Err(Failure::usage("nothing to do: pass --calib and/or --gain"));
    }
    let gain = args
        .gain
        .map(PhotometricGain::new)
        .transpose()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let cal = match &args.calib {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))?;
            Some(ColorCalibration::from_json(&text)?)
        }
        None => None,
    };
    let mut frame = load_frame(&args.input)?;
    if args.inverse {
        if let Some(g) = &gain {
            frame = apply_frame_gain(&frame, &g.inverse())?;
        }
        if let Some(c) = &cal {
            frame = remove(&frame, c)?;
        }
    } else {
        frame = correct_frame(&frame, cal.as_ref())?;
        if let Some(g) = &gain {
            frame = apply_frame_gain(&frame, g)?;
        }
    }
    io::save_frame(&frame, &args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    sink.emit(
        "correct",
        &CorrectReport {
            out: args.out.display().to_string(),
            width: frame.width(),
            height: frame.height(),
            raw: matches!(frame, Frame::Raw(_)),
            inverse: args.inverse,
            alpha_range: cal.as_ref().map(ColorCalibration::alpha_range),
            gain: gain.map(|g| g.beta),
        },
    )
}
