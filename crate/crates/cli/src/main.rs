//! Command-line front-end for the forecasting pipeline.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data/checkpoint
//! errors, 4 numerical failures, 5 I/O errors.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::AblationAxis;
use config::RunConfig;
use olinear::data::Split;
use olinear::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "olinear",
    version,
    about = "Orthogonally decorrelated linear forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override single keys, e.g. --set seed=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate correlation matrices, build the orthogonal bases, and
    /// write them with a split manifest.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoint.olck and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a split; writes metrics and predictions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Sweep one configuration axis under a shared seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// basis, normlin, csl_linear, or variant.
        #[arg(long)]
        axis: String,
    },
    /// Weight-rank, decorrelation, and FLOPs diagnostics for a checkpoint.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run() -> olinear::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { common } => {
            let config = RunConfig::load(&common.config, &common.set)?;
            commands::cmd_prepare(&config)
        }
        Command::Train { common } => {
            let config = RunConfig::load(&common.config, &common.set)?;
            commands::cmd_train(&config)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let config = RunConfig::load(&common.config, &common.set)?;
            let split: Split = split.parse()?;
            commands::cmd_eval(&config, &checkpoint, split).map(|_| ())
        }
        Command::Ablate { common, axis } => {
            let config = RunConfig::load(&common.config, &common.set)?;
            let axis: AblationAxis = axis.parse()?;
            commands::cmd_ablate(&config, axis)
        }
        Command::Inspect { common, checkpoint } => {
            let config = RunConfig::load(&common.config, &common.set)?;
            commands::cmd_inspect(&config, &checkpoint)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 2,
                Error::Data { .. } | Error::Checkpoint(_) => 3,
                Error::Shape { .. }
                | Error::Input { .. }
                | Error::Convergence { .. }
                | Error::Estimation(_)
                | Error::Numerical(_) => 4,
                Error::Io(_) => 5,
            };
            ExitCode::from(code)
        }
    }
}
