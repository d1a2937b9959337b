use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use localblur_core::geoalign::{self, estimate_flow_with};
use localblur_core::{io, Error, FlowField, Image, Rect};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, save_image, to_rgb};
use crate::config::Config;
use crate::manifest::LoadedManifest;
use crate::report::{CmdResult, ReportSink};

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Scene manifest; the reference pair (or the static pair) drives the flow.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Receives `flow.pfm` and `<id>_aligned.pfm` for every pair.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct PairAlignment {
    id: String,
    aligned: String,
    geometric_error_before: Option<f64>,
    geometric_error_after: Option<f64>,
}

#[derive(Serialize)]
struct AlignReport {
    flow: String,
    flow_median: [f64; 2],
    pairs: Vec<PairAlignment>,
}

/// Frame inset by the largest flow magnitude, where every warp is valid.
fn evaluation_rect(flow: &FlowField) -> Rect {
    let m = flow
        .u()
        .iter()
        .chain(flow.v())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let full = Rect::full(flow.width(), flow.height());
    let inset = full.inset(m.ceil() as usize + 1);
    if inset.is_empty() {
        full
    } else {
        inset
    }
}

fn error_in(a: &Image, b: &Image, r: Rect) -> anyhow::Result<Option<f64>> {
    match geoalign::geometric_error(&a.crop(r)?, &b.crop(r)?) {
        Ok(e) => Ok(Some(e)),
        Err(Error::NoTexture) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn run(args: AlignArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let m = LoadedManifest::load(&args.manifest)?;
    let mut pairs = vec![m.static_pair()?];
    let has_ref = m.manifest.reference_pair.is_some();
    pairs.extend(m.reference_pair()?);
    pairs.extend(m.targets()?);
    create_dir(&args.out_dir)?;

    let developed = pairs
        .par_iter()
        .map(|p| {
            Ok((
                to_rgb(&p.frames.blurred, &cfg.isp)?,
                to_rgb(&p.frames.sharp, &cfg.isp)?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (rb, rs) = &developed[usize::from(has_ref)];
    let flow = estimate_flow_with(rs, rb, &cfg.flow)?;
    let flow_path = args.out_dir.join("flow.pfm");
    io::save_flow(&flow, &flow_path)
        .with_context(|| format!("cannot write {}", flow_path.display()))?;
    let rect = evaluation_rect(&flow);

    let rows = pairs
        .par_iter()
        .zip(&developed)
        .map(|(p, (b, s))| {
            let warped = geoalign::warp(b, &flow)?;
            let name = format!("{}_aligned.pfm", p.id);
            save_image(&warped.image, &args.out_dir.join(&name))?;
            Ok(PairAlignment {
                id: p.id.clone(),
                aligned: name,
                geometric_error_before: error_in(b, s, rect)?,
                geometric_error_after: error_in(&warped.image, s, rect)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (mu, mv) = flow.median();
    sink.emit(
        "align",
        &AlignReport {
            flow: flow_path.display().to_string(),
            flow_median: [mu, mv],
            pairs: rows,
        },
    )
}
