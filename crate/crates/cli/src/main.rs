use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Steering-angle training with heterogeneous feature mimicking.
#[derive(Debug, Parser)]
#[command(name = "fmnet", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated mimicking paths (e.g. `PH,FH`), or `none`.
    #[arg(long, global = true)]
    paths: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic train and validation sets.
    GenData,
    /// Two-stage training.
    Train {
        /// Dataset written by `gen-data`; generated in memory if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Validation metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every row of an ablation preset for every configured seed.
    Ablate {
        /// Row preset; the config's `ablation.preset` if omitted.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare 3D activations on constant clips against the 2D reference.
    CheckInflate {
        /// Checkpoint to check; fresh inflated weights if omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Per-clip feature vectors of a tap level (or `feature`).
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "high")]
        level: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn exit_code(err: &fmnet::Error) -> u8 {
    match err {
        fmnet::Error::Usage(_) => 2,
        fmnet::Error::Config(_) => 3,
        fmnet::Error::Data { .. } => 4,
        fmnet::Error::Io { .. } => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fmnet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
