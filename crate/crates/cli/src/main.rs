//! Command-line front end for the QG reduced-order-modeling pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qgrom::commands;
use qgrom::RunConfig;

#[derive(Parser)]
#[command(name = "qgrom", version, about = "POD-Galerkin and LSTM reduced-order models for QG turbulence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full-order solver and store vorticity snapshots.
    Fom(Common),
    /// Build a POD basis from stored snapshots.
    Pod(Common),
    /// Integrate the Galerkin ROM from the first training state.
    #[command(name = "rom-gp")]
    RomGp(Common),
    /// Train the LSTM forecaster on the POD training coefficients.
    Train(Common),
    /// Roll a trained LSTM forward in closed loop.
    Predict(Common),
    /// Compare trajectories against reference mean fields.
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` entry of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output artifact path.
    #[arg(long)]
    out: PathBuf,
    /// Validate the configuration and print the run plan without running.
    #[arg(long)]
    dry_run: bool,
}

fn run(cli: Cli) -> qgrom::Result<String> {
    let (common, stage): (&Common, fn(&RunConfig, &std::path::Path) -> qgrom::Result<String>) =
        match &cli.command {
            Command::Fom(c) => (c, commands::cmd_fom),
            Command::Pod(c) => (c, commands::cmd_pod),
            Command::RomGp(c) => (c, commands::cmd_romgp),
            Command::Train(c) => (c, commands::cmd_train),
            Command::Predict(c) => (c, commands::cmd_predict),
            Command::Analyze(c) => (c, commands::cmd_analyze),
        };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set("seed", seed)?;
    }
    if common.dry_run {
        return match &cli.command {
            Command::Fom(_) => Ok(commands::fom_echo(&cfg.fom_config()?)),
            _ => Ok("configuration ok".to_string()),
        };
    }
    if let Command::Fom(_) = cli.command {
        eprintln!("{}", commands::fom_echo(&cfg.fom_config()?));
    }
    stage(&cfg, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
