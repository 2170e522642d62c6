//! `heatwave`: threshold, flag, build, ot, fit and simulate subcommands.

mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "heatwave", version, about = "Heatwave effect estimation on daily series")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the heatwave threshold.
    Threshold(Overrides),
    /// Write per-day heatwave and post-episode indicators.
    Flag(Overrides),
    /// Write the full table of constructed temperature variables.
    Build(Overrides),
    /// Search for the optimal temperature and write the risk curve.
    Ot(Overrides),
    /// Fit a model and write the effect report and coefficient table.
    Fit(Overrides),
    /// Run the Monte-Carlo model comparison.
    Simulate(SimulateArgs),
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// SimConfig JSON file (simulate.config_path).
    #[arg(long)]
    sim_config: Option<PathBuf>,
    /// Number of replicates (simulate.replicates).
    #[arg(long)]
    replicates: Option<usize>,
    /// Random seed (seed).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match cli.command {
        Command::Simulate(args) => {
            if let Some(p) = args.sim_config {
                cfg.simulate.config_path = Some(p);
            }
            if let Some(n) = args.replicates {
                cfg.simulate.replicates = n;
            }
            if let Some(s) = args.seed {
                cfg.seed = Some(s);
            }
            commands::simulate(&cfg)
        }
        Command::Threshold(o) => with_overrides(cfg, &o, commands::threshold),
        Command::Flag(o) => with_overrides(cfg, &o, commands::flag),
        Command::Build(o) => with_overrides(cfg, &o, commands::build),
        Command::Ot(o) => with_overrides(cfg, &o, commands::ot),
        Command::Fit(o) => with_overrides(cfg, &o, commands::fit),
    }
}

fn with_overrides(
    mut cfg: RunConfig,
    o: &Overrides,
    cmd: fn(&RunConfig) -> Result<(), Failure>,
) -> Result<(), Failure> {
    o.apply(&mut cfg);
    cfg.resolve();
    cfg.validate()?;
    cmd(&cfg)
}
