use std::path::PathBuf;

use clap::Args;
use localblur_core::lbfmg::{lbfmg_generate, MaskScene, PairView};
use localblur_core::Image;
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, save_mask, to_rgb};
use crate::config::Config;
use crate::manifest::LoadedManifest;
use crate::report::{CmdResult, Failure, ReportSink};

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    /// Scene manifest with a static pair and at least one target pair.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Receives `<id>_lbfmg.png` for every target pair.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct MaskRow {
    id: String,
    mask: String,
    area_fraction: f64,
    /// Against the manifest's ground-truth mask, when one is listed.
    iou: Option<f64>,
}

#[derive(Serialize)]
struct GenMaskReport {
    masks: Vec<MaskRow>,
    mean_iou: Option<f64>,
}

struct Developed {
    sharp: Image,
    blurred: Image,
}

impl Developed {
    fn view(&self) -> PairView<'_> {
        PairView {
            sharp: &self.sharp,
            blurred: &self.blurred,
        }
    }
}

pub fn run(args: GenMaskArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let m = LoadedManifest::load(&args.manifest)?;
    let targets = m.targets()?;
    if targets.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "manifest lists no target pairs"
        )));
    }
    let st = m.static_pair()?;
    let develop = |f: &localblur_core::pipeline::PairFrames| -> anyhow::Result<Developed> {
        Ok(Developed {
            sharp: to_rgb(&f.sharp, &cfg.isp)?,
            blurred: to_rgb(&f.blurred, &cfg.isp)?,
        })
    };
    let st = develop(&st.frames)?;
    let dev = targets
        .par_iter()
        .map(|t| develop(&t.frames))
        .collect::<anyhow::Result<Vec<_>>>()?;
    create_dir(&args.out_dir)?;

    let rows = (0..targets.len())
        .into_par_iter()
        .map(|i| {
            let scene = MaskScene {
                static_pair: Some(st.view()),
                target: dev[i].view(),
                others: dev
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, d)| d.view())
                    .collect(),
            };
            let out = lbfmg_generate(&scene, &cfg.lbfmg)?;
            let name = format!("{}_lbfmg.png", targets[i].id);
            save_mask(&out.mask, &args.out_dir.join(&name))?;
            let iou = match &targets[i].gt_mask {
                Some(gt) => Some(out.mask.iou(gt)?),
                None => None,
            };
            Ok(MaskRow {
                id: targets[i].id.clone(),
                mask: name,
                area_fraction: out.mask.area_fraction(),
                iou,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let ious: Vec<f64> = rows.iter().filter_map(|r| r.iou).collect();
    let mean_iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
    sink.emit(
        "gen-mask",
        &GenMaskReport {
            masks: rows,
            mean_iou,
        },
    )
}
