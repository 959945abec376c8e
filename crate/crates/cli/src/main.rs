//! `ortho`: two-stage orthogonal-moment estimation and its Monte Carlo checks.
//!
//! Exit codes: 0 success, 1 input or I/O error, 2 estimation failure.

mod check;
mod config;
mod estimate;
mod simulate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use config::{parse_config, Config};

#[derive(Parser)]
#[command(name = "ortho", version, about = "Two-stage estimation with orthogonal moment conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate θ on a CSV data set.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write the JSON summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo experiment and write results, aggregates and a report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to all cores. Output does not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run derivative, orthogonality, bound and rate checks.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute aggregates and verdicts from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Markdown report destination.
        #[arg(long)]
        out: PathBuf,
        /// Also write the aggregate CSV here.
        #[arg(long)]
        aggregate: Option<PathBuf>,
    },
}

/// A failed command and the exit code it maps to.
pub enum Failure {
    Input(anyhow::Error),
    Estimation(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn load_config(path: &Path) -> anyhow::Result<Config> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).map_err(|errs| {
        let list: Vec<String> = errs.iter().map(|e| format!("  - {e}")).collect();
        anyhow!("invalid config {}:\n{}", path.display(), list.join("\n"))
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate { data, config, out } => estimate::run(&data, &config, out.as_deref()),
        Command::Simulate {
            config,
            workers,
            out_dir,
        } => simulate::simulate(&config, workers, out_dir.as_deref()),
        Command::Check { config } => check::run(&config),
        Command::Report {
            results,
            out,
            aggregate,
        } => simulate::report(&results, &out, aggregate.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Estimation(e)) => {
            eprintln!("estimation failed: {e:#}");
            ExitCode::from(2)
        }
    }
}
