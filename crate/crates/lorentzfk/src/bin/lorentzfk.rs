//! Command-line front end: parses a JSON experiment config, applies the
//! seed/output-dir overrides, and dispatches to the harness. Exit codes:
//! 0 success, 2 invalid config, 3 cost guard, 4 numerical failure, 5 io.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use lorentzfk::harness::{run, ExperimentConfig, StageError, Subcommand};

#[derive(Parser)]
#[command(
    name = "lorentzfk",
    version,
    about = "Sampler and verification suite for bosonic spin systems on random causal triangulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Sample size-biased trees and their triangulations.
    SampleCdlt(CommonArgs),
    /// Emit layer, growth-constant, and coupling-sum tables.
    GeometryStats(CommonArgs),
    /// Monte Carlo reduced-density-matrix kernel estimation.
    McRun(CommonArgs),
    /// Run every brute-force-vs-MC comparison on the canned instances.
    OracleCheck(CommonArgs),
    /// Tuned-action verification sweep over n'.
    MwVerify(CommonArgs),
}

fn execute(cmd: Subcommand, args: &CommonArgs) -> Result<(), StageError> {
    let raw = std::fs::read_to_string(&args.config).map_err(|e| {
        StageError::ConfigInvalid(format!("{}: {e}", args.config.display()))
    })?;
    let mut config: ExperimentConfig = serde_json::from_str(&raw)
        .map_err(|e| StageError::ConfigInvalid(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output.directory = dir.display().to_string();
    }
    let threads = std::env::var("LORENTZFK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1);
    let out_dir = PathBuf::from(&config.output.directory);
    let (_manifest, result) = run(cmd, &config, &out_dir, threads);
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Command::SampleCdlt(a) => (Subcommand::SampleCdlt, a),
        Command::GeometryStats(a) => (Subcommand::GeometryStats, a),
        Command::McRun(a) => (Subcommand::McRun, a),
        Command::OracleCheck(a) => (Subcommand::OracleCheck, a),
        Command::MwVerify(a) => (Subcommand::MwVerify, a),
    };
    match execute(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lorentzfk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
