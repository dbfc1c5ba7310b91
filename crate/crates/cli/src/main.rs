//! `corradaptor`: generate synthetic pairs, train and evaluate the pruning
//! network, run inference and benchmark the attention kernels.

mod bench;
mod config;
mod eval;
mod gen;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// File names shared by the commands.
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUN_CONFIG_FILE: &str = "config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Parser, Debug)]
#[command(
    name = "corradaptor",
    version,
    about = "Correspondence pruning and relative pose estimation"
)]
struct Cli {
    /// TOML file with `preset` and optional [gen], [model] and [train] tables.
    /// Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/val/test splits of synthetic pairs and a manifest.
    Gen(gen::GenArgs),
    /// Train on a generated dataset and write a checkpoint and log.
    Train(train::TrainArgs),
    /// Predict inliers and poses for pairs with a trained model.
    Infer(eval::InferArgs),
    /// Score a trained model (and optionally RANSAC) on a test split.
    Eval(eval::EvalArgs),
    /// Time flow and dense attention over several sequence lengths.
    BenchAttn(bench::BenchArgs),
}

fn main() -> ExitCode {
    corradaptor::numerics::retain_freed_memory();
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Gen(a) => gen::run(a, config),
        Command::Train(a) => train::run(a, config),
        Command::Infer(a) => eval::infer(a),
        Command::Eval(a) => eval::run(a),
        Command::BenchAttn(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
