use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod report;

use report::{Failure, ReportSink};

/// Local motion deblurring toolkit: paired-capture simulation,
/// post-processing, mask generation, patch sampling, losses and metrics.
///
/// Every command writes a versioned JSON report to stdout or `--report`.
/// Exit status: 0 success, 1 usage or configuration error, 2 data error.
#[derive(Debug, Parser)]
#[command(name = "localblur", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-pair and per-pixel work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Omit the timestamp so identical runs give byte-identical reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a paired-capture scene and write it with its manifest.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit per-channel color correction fields to a lightbox capture.
    CalibrateColor(commands::calibrate::CalibrateArgs),
    /// Apply (or remove) a color calibration and optional channel gains.
    Correct(commands::correct::CorrectArgs),
    /// Estimate flow on a scene's reference pair and align every pair.
    Align(commands::align::AlignArgs),
    /// Generate blur masks for a scene by background subtraction.
    GenMask(commands::gen_mask::GenMaskArgs),
    /// Blur a masked foreground along a synthetic motion.
    SynthBlur(commands::synth_blur::SynthBlurArgs),
    /// Draw blur-aware training patches for a mask.
    Crop(commands::crop::CropArgs),
    /// Compute PSNR/SSIM, their mask-weighted variants and aligned PSNR.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Evaluate the training losses and check their gradients.
    LossCheck(commands::loss_check::LossCheckArgs),
    /// Run color correction, photometric alignment, ISP and geometric
    /// alignment on a scene.
    Pipeline(commands::pipeline::PipelineArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot set up {n} worker threads: {e}")))?;
    }
    let cfg = config::Config::load(cli.global.config.as_deref())?;
    let sink = ReportSink::new(cli.global.report.clone(), !cli.global.no_timestamp);
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(a, &cfg, &sink),
        Command::CalibrateColor(a) => commands::calibrate::run(a, &cfg, &sink),
        Command::Correct(a) => commands::correct::run(a, &cfg, &sink),
        Command::Align(a) => commands::align::run(a, &cfg, &sink),
        Command::GenMask(a) => commands::gen_mask::run(a, &cfg, &sink),
        Command::SynthBlur(a) => commands::synth_blur::run(a, &cfg, &sink),
        Command::Crop(a) => commands::crop::run(a, &cfg, &sink),
        Command::Evaluate(a) => commands::evaluate::run(a, &cfg, &sink),
        Command::LossCheck(a) => commands::loss_check::run(a, &cfg, &sink),
        Command::Pipeline(a) => commands::pipeline::run(a, &cfg, &sink),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}
