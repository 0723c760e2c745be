// SPDX-License-Identifier: Apache-2.0
//! `aimc` command line: runs one experiment and writes its CSV artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aimc_core::harness::{run_experiment, write_artifacts, ExperimentConfig, ExperimentKind};
use aimc_core::AimcError;

#[derive(Parser)]
#[command(
    name = "aimc",
    version,
    about = "Analog in-memory computing crossbar experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MVM error of one programmed tile over time.
    MvmError(Common),
    /// Tile count and utilization of a layer manifest.
    MapReport(Common),
    /// Single-tile MVM error with and without range calibration.
    Calibrate(Common),
    /// Train the toy model once per seed and log per-epoch metrics.
    TrainDemo(Common),
    /// Toy-model accuracy over learned / calibrated range combinations.
    Ablation(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output CSV path; overrides `output_path`. Without either, CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(kind: ExperimentKind, args: Common) -> Result<(), AimcError> {
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(AimcError::InvalidConfig("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| AimcError::InvalidConfig(e.to_string()))?;
    }
    let mut doc = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if args.seed.is_some() {
        doc.seed = args.seed;
    }
    if args.out.is_some() {
        doc.output_path = args.out;
    }
    let cfg = doc.resolve(kind)?;
    let output = run_experiment(&cfg)?;
    for line in &output.summary {
        eprintln!("{line}");
    }
    match &cfg.output_path {
        Some(out) => {
            for p in write_artifacts(out, kind, &output)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            for a in &output.artifacts {
                print!("{}", a.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::MvmError(a) => (ExperimentKind::MvmError, a),
        Command::MapReport(a) => (ExperimentKind::MapReport, a),
        Command::Calibrate(a) => (ExperimentKind::Calibrate, a),
        Command::TrainDemo(a) => (ExperimentKind::TrainDemo, a),
        Command::Ablation(a) => (ExperimentKind::Ablation, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
