use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use selkalman_cli::config::ExperimentConfig;
use selkalman_cli::runner::{cmd_invert, cmd_report, cmd_simulate, ModelKind, RunContext};

/// Selection-Kalman initial-state inversion experiments.
#[derive(Parser)]
#[command(name = "selkalman", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the root seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also via SELKALMAN_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the synthetic truth and write the observation series.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Invert for the initial state under one model.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
        /// Model variant: skm (selection) or tkm (traditional).
        #[arg(long)]
        model: String,
        /// Restrict to a single configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Render the RMSE table and heatmap rasters from a completed run.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run() -> selkalman_cli::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let ctx = RunContext::resolve(&cfg, common.out, common.seed);
            cmd_simulate(&cfg, &ctx)
        }
        Command::Invert {
            common,
            model,
            horizon,
        } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let ctx = RunContext::resolve(&cfg, common.out, common.seed);
            let model: ModelKind = model.parse()?;
            cmd_invert(&cfg, model, horizon, &ctx)
        }
        Command::Report { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let ctx = RunContext::resolve(&cfg, common.out, common.seed);
            cmd_report(&cfg, &ctx)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("selkalman: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
