//! `poseaug` binary: argument parsing and dispatch.
//!
//! All behavior lives in the library ([`poseaug_cli::commands`]); this
//! file only maps flags onto [`poseaug_cli::config::load_config`] and
//! prints a one-line diagnostic (exit code 1) on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poseaug_cli::{commands, config};

#[derive(Parser)]
#[command(
    name = "poseaug",
    about = "Cross-view pose augmentation pipeline: generate, train, augment, match, evaluate",
    version
)]
struct Cli {
    /// TOML configuration file (defaults apply for missing keys).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed, overriding the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, overriding the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Dotted-path config override, e.g. `--set cpgnet_train.epochs=5`
    /// (repeatable; applied after the config file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cross-view corpus into `<out>/dataset`.
    GenData,
    /// Train the pose-transfer network on a dataset directory.
    TrainCpgnet {
        /// Dataset directory (from `gen-data`).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Continue a previous checkpoint up to the configured epochs.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Grow a dataset with pose-transferred samples into `<out>/augmented`.
    Augment {
        /// Pose-transfer checkpoint (from `train-cpgnet`).
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Dataset directory to augment.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Train the cross-view matcher on a (typically augmented) dataset.
    TrainCrossgan {
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Continue a previous checkpoint up to the configured epochs.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Single-shot retrieval evaluation; writes CMC curve and metrics.
    Eval {
        /// Matcher checkpoint (unneeded when `eval.oracle = true`).
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory to evaluate on.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Sweep weight-sharing depths and record cross-view distances.
    AblateSharing {
        /// Dataset directory to train the sweep on.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::load_config(
        cli.config.as_deref(),
        &cli.sets,
        cli.seed,
        cli.out.as_deref(),
    )?;
    match cli.command {
        Command::GenData => {
            commands::cmd_gen_data(&cfg)?;
        }
        Command::TrainCpgnet { data, resume } => {
            commands::cmd_train_cpgnet(&cfg, &data, resume.as_deref())?;
        }
        Command::Augment { checkpoint, data } => {
            commands::cmd_augment(&cfg, &checkpoint, &data)?;
        }
        Command::TrainCrossgan { data, resume } => {
            commands::cmd_train_crossgan(&cfg, &data, resume.as_deref())?;
        }
        Command::Eval { checkpoint, data } => {
            commands::cmd_eval(&cfg, checkpoint.as_deref(), &data)?;
        }
        Command::AblateSharing { data } => {
            commands::cmd_ablate(&cfg, &data)?;
        }
    }
    Ok(())
}
