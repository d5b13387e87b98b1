//! The `dtanet` command line: validate, fit, compare, summarize, simulate.
//!
//! Exit codes: 0 success, 1 validation failure, 2 parse or configuration
//! error, 3 sampling failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{
    cmd_compare, cmd_fit, cmd_simulate, cmd_summarize, cmd_validate, write_summaries, CompareRow, FitOutcome,
    RecoveryRow, COMPARE_FILE, CONTAINER_FILE,
};
pub use config::{OutputsConfig, RunConfig};
pub use manifest::{read_manifest, sha256_hex, ArtifactEntry, ArtifactWriter, Manifest, FAILURE_MARKER, MANIFEST_FILE};

use crate::model::ModelVariant;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Parse(_) | CliError::Io(_) => 2,
            CliError::Sampling(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtanet", version, about = "Network meta-analysis of diagnostic accuracy at multiple thresholds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset against a model variant's network requirements.
    Validate(ValidateArgs),
    /// Fit the model of a run config and write posterior, diagnostics and summaries.
    Fit(FitArgs),
    /// Fit every spec of the config's compare list and tabulate DIC.
    Compare(FitArgs),
    /// Summaries and figures from a saved posterior container.
    Summarize(SummarizeArgs),
    /// Write a synthetic analog network with its true parameters.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "anova")]
    pub variant: ModelVariant,
    /// Keep only each continuous test's count at its reference threshold.
    #[arg(long)]
    pub reference_thresholds_only: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the sampler seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extend the container already in the output directory by the
    /// configured number of retained draws.
    #[arg(long)]
    pub resume: bool,
}

impl FitArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        FitArgs { config: config.into(), seed: None, threads: None, out: None, resume: false }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub posterior: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run config whose outputs section selects what to write.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Include between-study heterogeneity in the intervals.
    #[arg(long)]
    pub predictive: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// hcc, prostate or small.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = crate::networks::BUNDLED_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(&a).map(|(report, text)| {
            print!("{text}");
            if report.is_ok() { 0 } else { 1 }
        }),
        Command::Fit(a) => cmd_fit(&a).map(|o| {
            if let Some(d) = &o.dic {
                println!("D̄res {:.1}  pV {:.1}  DIC {:.1}", d.mean_residual_deviance, d.p_v, d.dic);
            }
            for w in &o.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} artifacts to {}", o.manifest.artifacts.len(), o.out_dir.display());
            0
        }),
        Command::Compare(a) => cmd_compare(&a).map(|rows| {
            println!("{:<28} {:>10} {:>8} {:>10}  status", "spec", "D̄res", "pV", "DIC");
            for r in &rows {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
                println!(
                    "{:<28} {:>10} {:>8} {:>10}  {}{}",
                    r.spec,
                    f(r.mean_residual_deviance),
                    f(r.p_v),
                    f(r.dic),
                    r.status,
                    if r.best { "  *" } else { "" }
                );
            }
            0
        }),
        Command::Summarize(a) => cmd_summarize(&a).map(|m| {
            println!("wrote {} artifacts", m.artifacts.len());
            0
        }),
        Command::Simulate(a) => cmd_simulate(&a).map(|m| {
            for e in &m.artifacts {
                println!("{}", a.out.join(&e.path).display());
            }
            0
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}

/// Parses `args` (program name first) and runs it. Argument errors exit 2.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() { 2 } else { 0 }
        }
    }
}
