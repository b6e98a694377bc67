use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gnnlab_cli::{exit_code_for, report, runner};
use gnnlab_core::train::TrainMode;

/// Graph-classification experiments: triplet-loss pre-training vs
/// end-to-end training, with embedding capacity diagnostics.
#[derive(Parser)]
#[command(name = "gnnlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset source, print statistics, write the dataset cache.
    Ingest {
        /// Experiment config (TOML; only [dataset] is used here).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the dataset cache.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the hyperparameter grid across seeds; resumable.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (trial logs, checkpoints, manifest).
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one training regime.
        #[arg(long, default_value = "all")]
        mode: String,
        /// Concurrent trials.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Stop after this many fresh trials (smoke runs, resume testing).
        #[arg(long)]
        max_trials: Option<usize>,
    },
    /// Summarize a run directory and emit analysis CSVs.
    Report {
        /// Run directory written by `train`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(mode: &str) -> anyhow::Result<Option<TrainMode>> {
    if mode == "all" {
        return Ok(None);
    }
    Ok(Some(mode.parse::<TrainMode>()?))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { config, out } => {
            runner::cmd_ingest(&config, &out)?;
        }
        Command::Train {
            config,
            out,
            mode,
            jobs,
            max_trials,
        } => {
            let mode = parse_mode(&mode)?;
            let outcome = runner::cmd_train(&config, &out, mode, jobs, max_trials)?;
            println!(
                "trials: {} fresh, {} resumed",
                outcome.fresh_trials, outcome.resumed_trials
            );
            match &outcome.summaries {
                Some(summaries) => {
                    for s in summaries {
                        println!(
                            "{} {}: test acc {:.3} ± {:.3} over {} trials",
                            s.architecture.name(),
                            s.mode.name(),
                            s.test_accuracy_mean,
                            s.test_accuracy_std,
                            s.trials
                        );
                    }
                }
                None => println!("run interrupted by --max-trials; rerun to complete"),
            }
        }
        Command::Report { out } => {
            let outcome = report::cmd_report(&out)?;
            for line in &outcome.table {
                println!("{line}");
            }
            for warning in &outcome.warnings {
                eprintln!("warning: {warning}");
            }
            println!("artifacts: {}", out.join("report").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
