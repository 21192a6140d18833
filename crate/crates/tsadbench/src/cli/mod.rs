//! Batch command-line front end tying generation, ingestion, training,
//! scoring, benchmarking, and reporting together.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 partial benchmark
//! failure.

mod commands;
mod config;

pub use commands::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_score, cmd_train, BenchmarkOptions,
    DatasetOptions, SynthOptions,
};
pub use config::ConfigFile;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "tsadbench",
    about = "Benchmark unsupervised anomaly detectors on multivariate time series",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the TEP-style CSV schema.
    Generate {
        /// Run configuration file ([synth] section).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for train.csv and test.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one detector on fault-free data and save the model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Detector variant name (e.g. dense_ae).
        #[arg(long)]
        detector: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for <detector>.model.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a series CSV with a saved model.
    Score {
        /// Saved model path.
        #[arg(long)]
        model: PathBuf,
        /// Series CSV holding exactly one run.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for scores.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute best F1 / AUPRC for a score file against labels.
    Evaluate {
        /// Score CSV (timestep,score).
        #[arg(long)]
        scores: PathBuf,
        /// Labeled dataset CSV providing the ground truth.
        #[arg(long)]
        labels: PathBuf,
        /// Optional directory for report.json and pr_curve.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full protocol over a detector registry.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated detector names; default: all thirteen.
        #[arg(long)]
        detectors: Option<String>,
        /// Per-method wall-clock budget in seconds.
        #[arg(long)]
        budget_seconds: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for results.jsonl and ranking.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) => 1,
        _ => 2,
    }
}

/// Parses args and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate { config, seed, out } => commands::run_generate(config, seed, &out),
        Command::Train {
            config,
            detector,
            seed,
            out,
        } => commands::run_train(config, &detector, seed, &out),
        Command::Score { model, data, out } => cmd_score(&model, &data, &out).map(|_| 0),
        Command::Evaluate { scores, labels, out } => {
            cmd_evaluate(&scores, &labels, out.as_deref()).map(|_| 0)
        }
        Command::Benchmark {
            config,
            detectors,
            budget_seconds,
            seed,
            out,
        } => commands::run_benchmark(config, detectors, budget_seconds, seed, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
