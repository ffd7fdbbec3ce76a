//! `nbof`: train, evaluate, gradient-check, generate data and export
//! attention maps.
//!
//! JSON goes to stdout, human-readable tables to stderr. Exit codes: 0 on
//! success, 1 when a check fails, 2 on usage, configuration or IO errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "nbof", version, about = "Neural bag-of-features sequence classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a configuration on a feature file and optionally save a final model.
    Train(TrainArgs),
    /// Score a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Finite-difference check of the full model loss gradient.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic feature file.
    Gen(GenArgs),
    /// Export per-head attention matrices for one item as CSV and PGM.
    InspectAttention(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path for a model fit on the whole feature file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the model and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Number of synthetic items in the checked loss.
    #[arg(long, default_value_t = 3)]
    items: usize,
    /// Corrupts the classifier gradient (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Noisy,
    Order,
}

#[derive(Debug, Args)]
struct GenArgs {
    generator: Generator,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    #[arg(long, default_value_t = 400)]
    count: usize,
    /// Noisy task only.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Noisy task only.
    #[arg(long, default_value_t = 0.1)]
    signal_fraction: f64,
    /// Noisy task only.
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    item: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Gen(a) => commands::gen(a),
        Command::InspectAttention(a) => commands::inspect_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<commands::CheckFailed>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
