use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use localblur_core::io;
use localblur_core::pipeline::{run_pipeline, PipelineConfig, PipelineReport, ProcessedPair};
use serde::Serialize;

use super::{create_dir, save_image, save_mask};
use crate::config::Config;
use crate::manifest::LoadedManifest;
use crate::report::{CmdResult, ReportSink};

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Scene manifest listing lightbox or calibration files and all pairs.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Receives `flow.pfm` and, per pair, `<id>_blurred.pfm`, `<id>_sharp.pfm`
    /// and `<id>_valid.png`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct PipelineCmdReport {
    ids: Vec<String>,
    flow: String,
    #[serde(flatten)]
    report: PipelineReport,
}

fn write_pair(p: &ProcessedPair, dir: &std::path::Path, id: &str) -> anyhow::Result<()> {
    save_image(&p.blurred, &dir.join(format!("{id}_blurred.pfm")))?;
    save_image(&p.sharp, &dir.join(format!("{id}_sharp.pfm")))?;
    save_mask(&p.valid, &dir.join(format!("{id}_valid.png")))
}

pub fn run(args: PipelineArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let m = LoadedManifest::load(&args.manifest)?;
    let (input, ids) = m.pipeline_input()?;
    let config = PipelineConfig {
        isp: cfg.isp,
        flow: cfg.flow,
    };
    let out = run_pipeline(&input, &config)?;
    create_dir(&args.out_dir)?;
    let dir = args.out_dir.as_path();
    let flow_path = dir.join("flow.pfm");
    io::save_flow(&out.flow, &flow_path)
        .with_context(|| format!("cannot write {}", flow_path.display()))?;
    write_pair(&out.static_pair, dir, "static")?;
    if let Some(r) = &out.reference {
        write_pair(r, dir, "reference")?;
    }
    for (p, id) in out.targets.iter().zip(&ids) {
        write_pair(p, dir, id)?;
    }
    sink.emit(
        "pipeline",
        &PipelineCmdReport {
            ids,
            flow: flow_path.display().to_string(),
            report: out.report,
        },
    )
}
