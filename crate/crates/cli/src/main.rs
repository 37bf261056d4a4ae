use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use solvdiff_cli::config::{Format, RunConfig};
use solvdiff_cli::error::CliError;
use solvdiff_cli::{apply_overrides, run, Command};

#[derive(Debug, Parser)]
#[command(name = "solvdiff", version, about = "Solvable diffusion models: curves, densities, classification, simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; overrides the configured destination.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for simulation and verification; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format; overrides the configuration.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("solvdiff: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if cli.command == Command::Verify => RunConfig::default(),
        None => return Err(CliError::Config("--config is required for this command".into())),
    };
    apply_overrides(&mut cfg, cli.seed, cli.format, cli.out.map(|p| p.to_string_lossy().into_owned()));
    // Buffer so that a failing command leaves no partial file behind.
    let mut buf = Vec::new();
    let result = run(cli.command, &cfg, &mut buf);
    if result.is_ok() || matches!(result, Err(CliError::VerifyFailed(_))) {
        match &cfg.output.path {
            Some(p) => std::fs::write(p, &buf).map_err(|e| CliError::Io(format!("{p}: {e}")))?,
            None => std::io::stdout().lock().write_all(&buf)?,
        }
    }
    result
}
