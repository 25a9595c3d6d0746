//! gesturebench: data generation, training, evaluation, benchmarking, and
//! streaming inference for the landmark-LSTM vs 3D-CNN gesture classifiers.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values; exits 2.
    Usage(String),
    /// Everything else; exits 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

impl From<gesturebench_core::Error> for CliError {
    fn from(err: gesturebench_core::Error) -> Self {
        CliError::Runtime(err.into())
    }
}

#[derive(Parser)]
#[command(
    name = "gesturebench",
    version,
    about = "Gesture classification engine and benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gesture dataset (landmark JSONL, optionally
    /// paired frame volumes).
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint; prints metrics JSON to stdout.
    Eval(EvalArgs),
    /// Benchmark an LSTM and a 3D CNN checkpoint side by side.
    Bench(BenchArgs),
    /// Stream landmark frames (JSONL on stdin) through an LSTM checkpoint.
    Stream(StreamArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of gesture classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    samples_per_class: usize,
    /// Frames per landmark sequence.
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Gaussian noise sigma on raw coordinates.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also render paired volumes with these T,H,W,C dims (C must be 1).
    #[arg(long, value_name = "T,H,W,C")]
    volumes: Option<String>,
    /// Gaussian blob radius in pixels for the volume renderer.
    #[arg(long, default_value_t = 1.5)]
    blob_sigma: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Model family: lstm or cnn3d.
    #[arg(long)]
    model: String,
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training history JSON path (default: <out>.history.json).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Fraction of the training data held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    ckpt_lstm: PathBuf,
    #[arg(long)]
    ckpt_cnn: PathBuf,
    /// Evaluation dataset directory for the LSTM (accuracy column).
    #[arg(long)]
    data_lstm: PathBuf,
    /// Evaluation dataset directory for the CNN (accuracy column).
    #[arg(long)]
    data_cnn: PathBuf,
    #[arg(long, default_value_t = gesturebench_core::bench::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = gesturebench_core::bench::DEFAULT_WARMUP)]
    warmup: usize,
    /// Report JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON config file (bench section).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct StreamArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Optional JSON config file (stream section).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Stream(args) => commands::stream::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
