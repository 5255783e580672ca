use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use svrkit::pipeline::{self, RunConfig, ScoreMode};
use svrkit::Result;

#[derive(Parser)]
#[command(name = "svrkit", version, about = "Speaker verification reasoning data toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct JobArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `global_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Extract descriptors and fit pitch/brightness cutoffs.
    FitCutoffs {
        #[command(flatten)]
        job: JobArgs,
    },
    /// Augment, label and render supervision instances.
    BuildDataset {
        #[command(flatten)]
        job: JobArgs,
    },
    /// Score model outputs against the dataset's trial references.
    Score {
        #[command(flatten)]
        job: JobArgs,
        /// JSONL of {trial_id, generated_text}.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_parser = ["sv", "svr"], default_value = "svr")]
        mode: String,
        /// Report path; a `.txt` table is written alongside.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a saved score report as a table.
    Diagnose {
        #[arg(long)]
        report: PathBuf,
        /// Second report to show deltas against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn load(job: &JobArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&job.config)?;
    if let Some(seed) = job.seed {
        cfg.global_seed = seed;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitCutoffs { job } => {
            let cfg = load(&job)?;
            let report = pipeline::with_workers(job.workers, || pipeline::cmd_fit_cutoffs(&cfg))??;
            if report.f0_failures > 0 {
                eprintln!("warning: {} utterances had no voiced F0 and were excluded", report.f0_failures);
            }
            print_json(&report)
        }
        Command::BuildDataset { job } => {
            let cfg = load(&job)?;
            let report = pipeline::with_workers(job.workers, || pipeline::cmd_build_dataset(&cfg))??;
            if report.svr_ineligible > 0 {
                eprintln!(
                    "warning: {} trials lack a full profile; no reasoning target was rendered for them",
                    report.svr_ineligible
                );
            }
            if !report.trials_missing_utterance.is_empty() {
                eprintln!(
                    "warning: {} trials reference unknown utterances and were skipped",
                    report.trials_missing_utterance.len()
                );
            }
            print_json(&report)
        }
        Command::Score {
            job,
            predictions,
            mode,
            out,
        } => {
            let cfg = load(&job)?;
            let mode: ScoreMode = mode.parse()?;
            let report = pipeline::with_workers(job.workers, || {
                pipeline::cmd_score(&cfg, &predictions, mode, out.as_deref())
            })??;
            if report.warnings > 0 {
                eprintln!(
                    "warning: {} unmatched, {} duplicate, {} ineligible predictions; {} trials without a prediction",
                    report.unmatched_prediction_ids.len(),
                    report.duplicate_prediction_ids.len(),
                    report.ineligible_prediction_ids.len(),
                    report.missing_prediction_ids.len()
                );
            }
            print!("{}", report.to_table(None));
            Ok(())
        }
        Command::Diagnose { report, baseline } => {
            print!("{}", pipeline::cmd_diagnose(&report, baseline.as_deref())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
