use std::path::PathBuf;

use clap::Args;
use localblur_core::losses::{
    grad_check, total_loss, DifferentiableLoss, GradCheckReport, LossBreakdown, MaeLoss, MseLoss,
    MsfrLoss, SsimLoss, MSFR_LEVELS,
};
use localblur_core::{pyramid, BlurMask, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{load_image, load_mask, parse_grid};
use crate::config::Config;
use crate::report::{CmdResult, Failure, ReportSink};

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Prediction image; requires --target.
    #[arg(long, requires = "target", conflicts_with = "random")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub target: Option<PathBuf>,
    /// Random target of size `WxH` and a perturbed prediction.
    #[arg(long, value_name = "WxH", value_parser = parse_grid)]
    pub random: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub pred_mask: Option<PathBuf>,
    #[arg(long)]
    pub target_mask: Option<PathBuf>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Coordinates checked per loss.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Serialize)]
struct LossCheckReport {
    width: usize,
    height: usize,
    loss: LossBreakdown,
    gradients: Vec<GradCheckReport>,
}

fn random_pair(w: usize, h: usize, seed: u64) -> localblur_core::Result<(Image, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.05..0.95))?;
    let pred = Image::from_fn(w, h, 3, |x, y, c| {
        (target.get(x, y, c) + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
    })?;
    Ok((pred, target))
}

pub fn run(args: LossCheckArgs, cfg: &Config, sink: &ReportSink) -> CmdResult {
    let (pred, target) = match (&args.pred, &args.target, args.random) {
        (Some(p), Some(t), None) => (load_image(p)?, load_image(t)?),
        (None, None, Some((w, h))) => random_pair(w, h, args.seed)?,
        _ => {
            return Err(Failure::usage(
                "pass either --pred and --target or --random WxH",
            ))
        }
    };
    let (w, h) = (target.width(), target.height());
    let mask = |p: &Option<PathBuf>| -> anyhow::Result<BlurMask> {
        match p {
            Some(p) => load_mask(p),
            None => Ok(BlurMask::ones(w, h)),
        }
    };
    let (pm, tm) = (mask(&args.pred_mask)?, mask(&args.target_mask)?);
    let loss = total_loss(
        &pyramid(&pred, MSFR_LEVELS),
        &pyramid(&target, MSFR_LEVELS),
        &pm,
        &tm,
        &cfg.losses,
    )?;
    let losses: Vec<Box<dyn DifferentiableLoss>> = vec![
        Box::new(MseLoss {
            target: target.clone(),
        }),
        Box::new(MaeLoss {
            target: target.clone(),
        }),
        Box::new(SsimLoss {
            target: target.clone(),
        }),
        Box::new(MsfrLoss {
            target: target.clone(),
            levels: MSFR_LEVELS,
        }),
    ];
    let gradients = losses
        .iter()
        .map(|l| grad_check(l.as_ref(), &pred, args.eps, args.samples, args.seed))
        .collect::<localblur_core::Result<Vec<_>>>()?;
    sink.emit(
        "loss-check",
        &LossCheckReport {
            width: w,
            height: h,
            loss,
            gradients,
        },
    )
}
