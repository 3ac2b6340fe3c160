//! `scm` — synthetic control studies from a declarative config.
//!
//! Every subcommand reads one TOML run config (`--config`) and writes a
//! deterministic set of artifacts plus a manifest into the output directory
//! (`--out`, or the config's `output.dir`). Exit codes: 0 on success, 1 on
//! a domain error (reported as one JSON line on stderr), 2 on usage errors
//! including an unreadable or unparseable config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scm_core::parallel::with_workers;
use scm_core::{Error, Result};

mod commands;
mod config;
mod study;

use config::LoadedConfig;

#[derive(Parser)]
#[command(
    name = "scm",
    version,
    about = "Synthetic control estimation, inference, and reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the main specification on every configured outcome.
    Fit(CommonArgs),
    /// Run the placebo permutation study and exact p-values.
    Placebo(CommonArgs),
    /// Leave-one-out robustness over the top-weight donors.
    Loo(CommonArgs),
    /// Re-estimate every outcome under each alternative estimator.
    Sensitivity(CommonArgs),
    /// Generate a synthetic panel with known counterfactuals.
    Simulate(CommonArgs),
    /// Render the full report: tables, figures, and percentiles.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Cap on worker threads for parallel stages.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Simulation seed; overrides the config's `output.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Fit(a)
            | Command::Placebo(a)
            | Command::Loo(a)
            | Command::Sensitivity(a)
            | Command::Simulate(a)
            | Command::Report(a) => a,
        }
    }
}

fn report_error(error: &Error) {
    let line = serde_json::json!({
        "error": { "kind": error.kind(), "message": error.to_string() }
    });
    eprintln!("{line}");
}

fn run(command: &Command, loaded: &LoadedConfig) -> Result<()> {
    let args = command.args();
    let out_dir = match (&args.out, &loaded.config.output.dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => loaded.resolve(dir),
        (None, None) => {
            return Err(Error::InvalidSpec {
                message: "no output directory: pass --out or set [output] dir".to_string(),
            })
        }
    };
    let seed = args.seed.or(loaded.config.output.seed);
    with_workers(args.jobs, || match command {
        Command::Fit(_) => commands::cmd_fit(loaded, &out_dir, seed),
        Command::Placebo(_) => commands::cmd_placebo(loaded, &out_dir, seed),
        Command::Loo(_) => commands::cmd_loo(loaded, &out_dir, seed),
        Command::Sensitivity(_) => commands::cmd_sensitivity(loaded, &out_dir, seed),
        Command::Simulate(_) => commands::cmd_simulate(loaded, &out_dir, seed),
        Command::Report(_) => commands::cmd_report(loaded, &out_dir, seed),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match LoadedConfig::read(&cli.command.args().config) {
        Ok(loaded) => loaded,
        Err(error) => {
            report_error(&error);
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &loaded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            report_error(&error);
            ExitCode::from(1)
        }
    }
}
