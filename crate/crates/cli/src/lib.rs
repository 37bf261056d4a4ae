//! Command-line front end for solvdiff: configuration, subcommands and output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;

use commands::Output;
use config::{Format, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Local-volatility curve (F, sigma, sigma_loc) on the grid, optionally calibrated.
    Volcurve,
    /// Transition density of F on the grid with the surviving mass.
    Density,
    /// Green's function of the underlying on the grid with a symmetry check.
    Greens,
    /// Boundary classification and expectation-rate verdict.
    Classify,
    /// Sample paths of F on the configured schedule.
    Simulate,
    /// Run the verification suites; exits nonzero when any fails.
    Verify,
}

/// Applies command-line overrides to the configuration.
pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, format: Option<Format>, out: Option<String>) {
    if let Some(seed) = seed {
        if let Some(sim) = cfg.simulation.as_mut() {
            sim.seed = seed;
        }
        cfg.verify.get_or_insert_with(Default::default).seed = Some(seed);
    }
    if let Some(f) = format {
        cfg.output.format = f;
    }
    if out.is_some() {
        cfg.output.path = out;
    }
}

/// Runs `cmd` and writes its output to `out` in the configured format. A failed
/// verification still writes its report before returning the error.
pub fn run(cmd: Command, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let (output, failed) = match cmd {
        Command::Volcurve => (commands::volcurve(cfg)?, Vec::new()),
        Command::Density => (commands::density(cfg)?, Vec::new()),
        Command::Greens => (commands::greens(cfg)?, Vec::new()),
        Command::Classify => (commands::classify(cfg)?, Vec::new()),
        Command::Simulate => (commands::simulate(cfg)?, Vec::new()),
        Command::Verify => commands::verify(cfg)?,
    };
    let format = cfg.output.format;
    match output {
        Output::Table(t) => t.write(format, out)?,
        Output::Report { command, body, table } => match format {
            Format::Json => output::write_json_report(command, &body, out)?,
            Format::Csv => table.write(format, out)?,
        },
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failed))
    }
}
