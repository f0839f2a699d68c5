use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bearing_gnn::pipeline::{self, PipelineConfig};
use bearing_gnn::trainer::HistoryEntry;
use clap::{Args, Parser, Subcommand};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "BEARING_GNN_THREADS";

#[derive(Parser)]
#[command(name = "bearing-gnn", version, about = "Simulate roller bearings and train a graph network surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; missing sections use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.seed` and `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the full roller-count × load grid.
    Simulate(Common),
    /// Build the train/test split and its normalization statistics.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Single-step evaluation on the test bearing, plus the sweep.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Inner-ring displacement sweep.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Every stage in order.
    All(Common),
}

fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
        config.sim.seed = seed;
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} directory {} does not exist", path.display());
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn log_history(h: &HistoryEntry) {
    eprintln!("step {:>7}  train_loss {:.6e}  eval_loss {:.6e}", h.step, h.train_loss, h.eval_loss);
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(common) => {
            let config = resolve_config(&common)?;
            let m = pipeline::run_simulate(&config, &common.out)?;
            eprintln!("wrote {} trajectories to {}", m.outputs.len(), common.out.display());
        }
        Command::BuildDataset { common, trajectories } => {
            let config = resolve_config(&common)?;
            require_dir(&trajectories, "trajectory")?;
            pipeline::run_build_dataset(&config, &trajectories, &common.out)?;
            eprintln!("wrote dataset manifests to {}", common.out.display());
        }
        Command::Train { common, trajectories } => {
            let config = resolve_config(&common)?;
            require_dir(&trajectories, "trajectory")?;
            let (_, ckpt) = pipeline::run_train(&config, &trajectories, &common.out, log_history)?;
            eprintln!("best step {}; checkpoint in {}", ckpt.best_step, common.out.display());
        }
        Command::Eval { common, checkpoint, trajectories } => {
            let config = resolve_config(&common)?;
            require_file(&checkpoint, "checkpoint")?;
            require_dir(&trajectories, "trajectory")?;
            let (_, summary) = pipeline::run_eval(&config, &checkpoint, &trajectories, &common.out)?;
            println!("{}", serde_summary(&summary)?);
        }
        Command::Verify { common, checkpoint } => {
            let config = resolve_config(&common)?;
            require_file(&checkpoint, "checkpoint")?;
            let (_, summary) = pipeline::run_verify(&config, &checkpoint, &common.out)?;
            println!("{}", serde_summary(&summary.sweep)?);
        }
        Command::All(common) => {
            let config = resolve_config(&common)?;
            let (_, summary) = pipeline::run_all(&config, &common.out, log_history)?;
            println!("{}", serde_summary(&summary)?);
        }
    }
    Ok(())
}

fn serde_summary(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
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
