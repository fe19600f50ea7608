use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use medshift::commands::{cmd_estimate, cmd_oracle, cmd_simulate};
use medshift::config::{parse_seeds, Overrides, RunConfig};
use medshift::CliError;

/// Batch estimation of interventional indirect effects mapped to target
/// trials: cross-fitted one-step and targeted minimum-loss estimators, an
/// exact enumeration oracle, and a Monte Carlo simulation harness.
#[derive(Parser)]
#[command(name = "medshift", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimation grid (estimands x estimators x folds x seeds)
    /// over a CSV dataset.
    Estimate(CommonArgs),
    /// Run a simulation study (consistency, robustness, or coverage).
    Simulate(CommonArgs),
    /// Print exact estimand values and influence-function moments for a
    /// discrete law by enumeration.
    Oracle(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags below override its scalar fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list: comma-separated values and inclusive ranges (1,2,5..8).
    #[arg(long)]
    seeds: Option<String>,
    /// Cross-fitting fold count (replaces the config's fold grid).
    #[arg(long)]
    folds: Option<usize>,
    /// Disable weight stabilization for the one-step estimator.
    #[arg(long)]
    no_stabilize: bool,
    /// Positivity truncation bound in [0, 0.5).
    #[arg(long)]
    trunc: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self, require_config: bool) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None if require_config => {
                return Err(CliError::Config("--config is required".into()))
            }
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            out: self.out.clone(),
            seeds: self.seeds.as_deref().map(parse_seeds).transpose()?,
            folds: self.folds,
            no_stabilize: self.no_stabilize,
            trunc: self.trunc,
        };
        config.apply(&overrides);
        Ok(config)
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(&args.resolve(true)?),
        Command::Simulate(args) => cmd_simulate(&args.resolve(false)?),
        Command::Oracle(args) => cmd_oracle(&args.resolve(false)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("medshift: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
