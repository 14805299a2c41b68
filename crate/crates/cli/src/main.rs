#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::EvalKind;
use config::{Overrides, RunConfig};
use tightsfm_core::eval::ExperimentKind;

/// Environment variable read for the worker thread count.
const THREADS_ENV: &str = "TIGHTSFM_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "tightsfm",
    version,
    about = "Synthetic depth and egomotion estimation via iterative view synthesis"
)]
struct Cli {
    /// Key-value config file (`section.key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Estimator iterations (experiments sweep 1..=N).
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Depth refinement epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a frame set from a scene and a camera-to-world trajectory.
    SynthGen {
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Pose file; the default circular loop when omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Estimate consecutive-frame egomotion and chain it into a trajectory.
    Estimate { frames: PathBuf },
    /// Jointly refine per-frame depth and egomotion.
    Optimize { frames: PathBuf },
    /// Compare an estimate with ground truth.
    Eval {
        #[arg(long, value_enum)]
        kind: EvalKind,
        est: PathBuf,
        gt: PathBuf,
    },
    /// Run a sweep experiment and write its table.
    Experiment {
        /// loss-curve, perturbation-sweep, depth-scale-sweep or frame-skip-sweep.
        kind: ExperimentKind,
        /// Frame set to use instead of rendering the default sequence.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let overrides = Overrides {
        seed: cli.seed,
        iterations: cli.iterations,
        epochs: cli.epochs,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = || cli.out.clone().context("--out is required for this command");
    let msg = match &cli.command {
        Command::SynthGen {
            scene,
            trajectory,
            stride,
        } => {
            if let Some(s) = stride {
                cfg.synth.stride = *s;
                cfg.validate()?;
            }
            commands::synth_gen(&cfg, scene.as_deref(), trajectory.as_deref(), &out()?)?
        }
        Command::Estimate { frames } => commands::estimate(&cfg, frames, &out()?)?,
        Command::Optimize { frames } => commands::optimize(&cfg, frames, &out()?)?,
        Command::Eval { kind, est, gt } => commands::eval(&cfg, *kind, est, gt, cli.out.as_deref())?,
        Command::Experiment { kind, frames } => commands::experiment(&cfg, *kind, frames.as_deref(), &out()?)?,
    };
    print!("{msg}");
    if !msg.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
