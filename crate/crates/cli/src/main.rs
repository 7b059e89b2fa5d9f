mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssm_core::{Error, Execution};

/// Supervised smoothed manifold affinity learning for re-identification.
#[derive(Debug, Parser)]
#[command(name = "ssm", version)]
struct Cli {
    /// Run every stage on one thread
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a model from database distances and identity labels
    Learn(commands::LearnArgs),
    /// Rank the gallery for each probe distance vector
    Query(commands::QueryArgs),
    /// Compute CMC and mAP from rankings and ground truth
    Eval(commands::EvalArgs),
    /// Write a synthetic two-camera dataset
    Synth(commands::SynthArgs),
    /// Time offline learning and online queries
    Bench(commands::BenchArgs),
}

/// 1 is I/O or anything unclassified; 2 is reserved for usage errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 3,
        Some(Error::Format { .. }) => 4,
        Some(Error::Domain { .. }) => 5,
        Some(Error::Shape { .. }) => 6,
        Some(Error::Capacity { .. }) => 7,
        Some(Error::Singular { .. }) => 8,
        Some(Error::Io(_)) | None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match &cli.command {
        Command::Learn(a) => commands::learn(a, exec),
        Command::Query(a) => commands::query(a, exec),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
