use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stablefield::config::{ExperimentConfig, Kind, OUTPUT_ENV};
use stablefield::runner::{self, Manifest, RunFailure};

/// Stable-noise OU field experiments.
#[derive(Parser)]
#[command(name = "stablefield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a field path and write its coefficients and jump ledger.
    Simulate(Common),
    /// Median-slope and partial-sum scan of weighted coefficients.
    ThresholdScan(Common),
    /// First-jump times and window coverage.
    JumpDensity(Common),
    /// Window-oscillation scan over truncation levels.
    Oscillation(Common),
    /// Continuity integral and refinement moduli.
    GaussianCheck(Common),
    /// Exploratory negative-delta oscillation probe.
    Question4Probe(Common),
    /// Check a config without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Take the config from a manifest written by an earlier run.
    #[arg(long, conflicts_with = "config")]
    from_manifest: Option<PathBuf>,
    /// Output directory; defaults to the config value, then $STABLEFIELD_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Override any config field, e.g. `--set alpha=1.5 --set deltas=[0.5,1.5]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(common: &Common) -> stablefield::Result<ExperimentConfig> {
    let mut config = match (&common.config, &common.from_manifest) {
        (Some(path), _) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        (None, Some(path)) => Manifest::read(path)?.config,
        (None, None) => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        config.set(o)?;
    }
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    if common.out.is_some() {
        config.output_dir = common.out.clone();
    } else if config.output_dir.is_none() {
        config.output_dir = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
    }
    Ok(config)
}

fn fail(failure: RunFailure) -> ExitCode {
    eprintln!("{}", failure.record());
    ExitCode::from(failure.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Simulate(c) => (Some(Kind::Simulate), c),
        Command::ThresholdScan(c) => (Some(Kind::ThresholdScan), c),
        Command::JumpDensity(c) => (Some(Kind::JumpDensity), c),
        Command::Oscillation(c) => (Some(Kind::Oscillation), c),
        Command::GaussianCheck(c) => (Some(Kind::GaussianCheck), c),
        Command::Question4Probe(c) => (Some(Kind::Question4Probe), c),
        Command::Validate(c) => (None, c),
    };
    let mut config = match load(common) {
        Ok(c) => c,
        Err(e) => return fail(RunFailure::Failed(e)),
    };
    let Some(kind) = kind else {
        let diagnostics = config.validate();
        if diagnostics.is_empty() {
            println!("{}", serde_json::json!({ "status": "ok" }));
            return ExitCode::SUCCESS;
        }
        return fail(RunFailure::Validation(diagnostics));
    };
    config.kind = Some(kind);
    match runner::run(&config) {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::json!({
                    "status": "ok",
                    "csvs": outcome.csvs,
                    "manifests": outcome.manifests,
                })
            );
            ExitCode::SUCCESS
        }
        Err(failure) => fail(failure),
    }
}
