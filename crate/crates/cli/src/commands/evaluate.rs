//! Single-pair or batch evaluation.
//!
//! A batch manifest lists prediction triples; paths resolve against the
//! manifest's directory:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "pairs": [
//!     { "id": "t00", "sharp": "t00_sharp.pfm", "pred": "t00_pred.pfm", "mask": "t00_mask.png" }
//!   ]
//! }
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use localblur_core::metrics::{evaluate_pair, AlignOptions, MetricReport};
use localblur_core::BlurMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_image, load_mask};
use crate::config::Config;
use crate::manifest::MANIFEST_VERSION;
use crate::report::{CmdResult, Failure, ReportSink};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth sharp image.
    #[arg(long, requires = "pred", conflicts_with = "manifest")]
    pub sharp: Option<PathBuf>,
    /// Deblurred prediction.
    #[arg(long, requires = "sharp")]
    pub pred: Option<PathBuf>,
    /// Blur mask weighting PSNR_w and SSIM_w; all ones when absent.
    #[arg(long, conflicts_with = "manifest")]
    pub mask: Option<PathBuf>,
    /// JSON list of (sharp, pred, mask) triples to evaluate as a batch.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Shift search radius of the aligned PSNR.
    #[arg(long, default_value_t = 8)]
    pub radius: usize,
    /// Restrict the aligned PSNR search to mask-positive pixels.
    #[arg(long)]
    pub mask_search: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Triple {
    #[serde(default)]
    id: Option<String>,
    sharp: PathBuf,
    pred: PathBuf,
    #[serde(default)]
    mask: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalManifest {
    schema_version: u32,
    pairs: Vec<Triple>,
}

#[derive(Serialize)]
struct Row {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    mask_area_fraction: f64,
    #[serde(flatten)]
    metrics: MetricReport,
}

#[derive(Serialize)]
struct BatchReport {
    rows: Vec<Row>,
    mean: Option<MetricReport>,
}

fn evaluate_one(
    id: Option<String>,
    sharp: &Path,
    pred: &Path,
    mask: Option<&Path>,
    args: &EvaluateArgs,
) -> anyhow::Result<Row> {
    let sharp = load_image(sharp)?;
    let pred = load_image(pred)?;
    let mask = match mask {
        Some(p) => load_mask(p)?,
        None => BlurMask::ones(sharp.width(), sharp.height()),
    };
    let align = AlignOptions {
        radius: args.radius,
        mask: args.mask_search.then_some(&mask),
        ..AlignOptions::default()
    };
    Ok(Row {
        id,
        mask_area_fraction: mask.area_fraction(),
        metrics: evaluate_pair(&sharp, &pred, &mask, &align)?,
    })
}

fn load_manifest(path: &Path) -> anyhow::Result<(EvalManifest, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))?;
    let m: EvalManifest = serde_json::from_str(&text)
        .with_context(|| format!("malformed manifest {}", path.display()))?;
    if m.schema_version != MANIFEST_VERSION {
        bail!(
            "manifest schema_version {} is not supported",
            m.schema_version
        );
    }
    Ok((m, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

pub fn run(args: EvaluateArgs, _cfg: &Config, sink: &ReportSink) -> CmdResult {
    if let Some(path) = &args.manifest {
        let (m, base) = load_manifest(path)?;
        let rows = m
            .pairs
            .par_iter()
            .map(|t| {
                let mask = t.mask.as_ref().map(|p| base.join(p));
                evaluate_one(
                    t.id.clone(),
                    &base.join(&t.sharp),
                    &base.join(&t.pred),
                    mask.as_deref(),
                    &args,
                )
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let metrics: Vec<MetricReport> = rows.iter().map(|r| r.metrics).collect();
        return sink.emit(
            "evaluate",
            &BatchReport {
                mean: MetricReport::mean(&metrics),
                rows,
            },
        );
    }
    let (Some(sharp), Some(pred)) = (&args.sharp, &args.pred) else {
        return Err(Failure::usage("pass --sharp and --pred, or --manifest"));
    };
    let row = evaluate_one(None, sharp, pred, args.mask.as_deref(), &args)?;
    sink.emit("evaluate", &row)
}
