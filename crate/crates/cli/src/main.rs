mod config;
mod error;
mod stages;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Loaded;
use crate::error::CliError;
use crate::stages::Context;

/// Trajectory-driven calibration of a mesoscopic traffic simulator.
#[derive(Parser)]
#[command(name = "mesocal", version)]
struct Cli {
    /// TOML configuration (see `mesocal template`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding stage artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration with every key documented.
    Template,
    /// Write a synthetic grid scenario and a matching config to the output directory.
    Generate,
    /// Filter trajectories, re-estimate speeds and scale regional totals.
    Ingest,
    /// Fit zones, cluster paths and build the assignment maps.
    Cluster,
    /// Solve the path-flow problem per interval and build the trip table.
    EstimateFlow,
    /// Simulate the estimated trip table once.
    Simulate {
        /// `key = value` parameter file; defaults to the configured starting point.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Calibrate the simulator parameters against the observed travel times.
    Calibrate,
    /// Evaluate the calibrated pipeline against the up-sampling baselines.
    Baseline,
    /// Assemble the run report and the per-interval breakdown.
    Report,
    /// Run ingest through report.
    Run,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::Template = cli.command {
        return stages::template_cmd();
    }
    let ctx = Context {
        config: Loaded::load(cli.config.as_deref(), cli.seed)?,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Template => unreachable!(),
        Command::Generate => stages::generate_cmd(&ctx),
        Command::Ingest => stages::ingest(&ctx),
        Command::Cluster => stages::cluster(&ctx),
        Command::EstimateFlow => stages::estimate_flow(&ctx),
        Command::Simulate { params } => stages::simulate(&ctx, params.as_deref()),
        Command::Calibrate => stages::calibrate(&ctx),
        Command::Baseline => stages::baseline(&ctx),
        Command::Report => stages::report(&ctx),
        Command::Run => stages::run_all(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
