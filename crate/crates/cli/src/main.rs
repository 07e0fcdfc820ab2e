use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mia_audit::config::RunConfig;
use mia_audit::pipeline::{self, RunOptions, RunSummary};
use mia_audit::Result;

/// Membership-inference audits on synthetic or file-backed data.
#[derive(Parser)]
#[command(name = "mia-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (flat `key = value` file).
    config: PathBuf,
    /// Worker threads for grid cells; results do not depend on it.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,
    /// Print the normalized configuration to stdout before running.
    #[arg(long)]
    echo: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset of every seed.
    GenData(Common),
    /// Write each seed's splits and trained target model.
    TrainTarget(Common),
    /// Fit the configured attacks and write them.
    Attack(Common),
    /// Run the evaluation grid: report.json and ROC curves.
    Evaluate(Common),
    /// Run the transfer diagnostics: transfer_report.json.
    Transfer(Common),
    /// Run the configured experiment end to end.
    Run(Common),
}

fn execute(cli: Cli) -> Result<RunSummary> {
    let (common, stage): (Common, fn(&RunConfig, &RunOptions) -> Result<RunSummary>) = match cli.command {
        Command::GenData(c) => (c, pipeline::gen_data),
        Command::TrainTarget(c) => (c, pipeline::train_target),
        Command::Attack(c) => (c, pipeline::attack),
        Command::Evaluate(c) => (c, pipeline::evaluate),
        Command::Transfer(c) => (c, pipeline::transfer),
        Command::Run(c) => (c, pipeline::run),
    };
    let cfg = RunConfig::from_file(&common.config)?;
    if common.echo {
        print!("{}", cfg.to_config_string());
    }
    let opts = RunOptions::from_env(Some(common.parallel as usize))?;
    stage(&cfg, &opts)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", summary.output_dir.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
