//! Experiment runner CLI.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric failure in an
//! arm (the failed arm is named on stderr).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dizo_core::analyzer::stability_audit;
use dizo_core::error::Error;
use dizo_core::harness::{
    compare_arms, load_summary, read_records_csv, run_experiment, run_rate, run_varsym,
    ExperimentConfig, ExperimentSummary,
};

#[derive(Parser)]
#[command(
    name = "dizo",
    about = "Forward-pass-only training experiments: ZO-SGD and projected ZO (DiZO)",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) arm of an experiment config.
    Run {
        /// Path to a `key = value` experiment config.
        config: PathBuf,
    },
    /// Compare arms across one or more summary.json files.
    Compare {
        /// Summary files produced by `run`.
        summaries: Vec<PathBuf>,
    },
    /// Stability-audit a run record CSV.
    Audit {
        /// Record CSV produced by `run`.
        csv: PathBuf,
        /// Clip width the run used (0 for plain ZO-SGD or FO).
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Variance-symmetry test at the configured task's initial parameters.
    Varsym {
        config: PathBuf,
    },
    /// Convergence-rate fit over the configured budgets.
    Rate {
        config: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Numeric(_) => 2,
        _ => 1,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run { config } => {
            let config = ExperimentConfig::from_file(&config)?;
            let summary = run_experiment(&config)?;
            let failed: Vec<String> = summary
                .arms
                .iter()
                .filter_map(|arm| {
                    arm.aborted
                        .as_ref()
                        .map(|why| format!("{} seed {}: {why}", arm.method, arm.seed))
                })
                .collect();
            print_json(&summary)?;
            if !failed.is_empty() {
                for arm in &failed {
                    eprintln!("numeric failure in arm {arm}");
                }
                return Ok(2);
            }
            Ok(0)
        }
        Command::Compare { summaries } => {
            if summaries.is_empty() {
                return Err(Error::config("compare needs at least one summary.json"));
            }
            let loaded: Vec<ExperimentSummary> = summaries
                .iter()
                .map(|p| load_summary(p))
                .collect::<Result<_, _>>()?;
            let report = compare_arms(&loaded)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Audit { csv, tau } => {
            let records = read_records_csv(&csv)?;
            let report = stability_audit(&records, tau)?;
            print_json(&report)?;
            if report.violations > 0 {
                eprintln!("{} stability violations", report.violations);
                return Ok(2);
            }
            Ok(0)
        }
        Command::Varsym { config } => {
            let config = ExperimentConfig::from_file(&config)?;
            let report = run_varsym(&config)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Rate { config } => {
            let config = ExperimentConfig::from_file(&config)?;
            let fit = run_rate(&config)?;
            print_json(&fit)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
