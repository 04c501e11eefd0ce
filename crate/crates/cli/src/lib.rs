//! Command-line experiment runner for the `pathwise` library.
//!
//! Every command reads one TOML [`ExperimentConfig`], writes CSV tables and a
//! `report.json` (with the effective configuration echoed) into the output
//! directory, and maps its outcome to an exit code.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Outcome;
pub use config::ExperimentConfig;
pub use error::CliError;

/// Environment variable naming the fallback output directory.
pub const OUT_ENV: &str = "PATHWISE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CAVEAT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pathwise", version, about = "Pathwise calculus experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; falls back to the config, then $PATHWISE_OUT, then ./pathwise-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the top partition level.
    #[arg(long, global = true)]
    pub level: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Quadratic variation along the partition sequence.
    Qv,
    /// Föllmer integral and Itô residual sweep.
    Integrate,
    /// Delta hedge over a batch of scenario paths.
    Hedge,
    /// Cross-term identities and the plausibility verdict.
    Plausibility,
}

/// Loads the config and applies command-line overrides.
pub fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let file = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config FILE is required".into()))?;
    let mut cfg = ExperimentConfig::from_file(file)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(level) = cli.level {
        cfg.set_level(level)?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pathwise-out"));
    Ok((cfg, out))
}

pub fn run_command(command: Command, cfg: &ExperimentConfig, out: &std::path::Path) -> Result<Outcome, CliError> {
    match command {
        Command::Qv => commands::cmd_qv(cfg, out),
        Command::Integrate => commands::cmd_integrate(cfg, out),
        Command::Hedge => commands::cmd_hedge(cfg, out),
        Command::Plausibility => commands::cmd_plausibility(cfg, out),
    }
}

/// Runs the parsed command line, printing diagnostics, and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = resolve(cli).and_then(|(cfg, out)| run_command(cli.command, &cfg, &out));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", outcome.dir.join(f).display());
            }
            for c in &outcome.caveats {
                eprintln!("warning: {c}");
            }
            if outcome.caveats.is_empty() {
                EXIT_OK
            } else {
                EXIT_CAVEAT
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
