//! `revdetect`: score, calibrate and evaluate AI peer-review detectors, and
//! drive the review generation and editing pipelines.

mod commands;
mod config;
mod run;
mod wiring;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::GenerateArgs;
use crate::config::RunConfig;
use crate::run::Run;

#[derive(Parser)]
#[command(name = "revdetect", version, about = "Detect AI-written peer reviews")]
struct Cli {
    /// Run configuration (TOML; `${VAR}` is replaced from the environment).
    #[arg(short, long, global = true, default_value = "revdetect.toml")]
    config: PathBuf,
    /// Override `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override `dataset_root`.
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,
    /// Override `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the target FPR list (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    /// Override the detector list (comma separated; `anchor` selects all anchor LLMs).
    #[arg(long, global = true, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a dataset split with the selected detectors.
    Score {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Calibrate thresholds on human calibration reviews.
    Calibrate,
    /// Evaluate calibrated detectors on the test split.
    Evaluate {
        /// Only count AI reviews from this dataset LLM (e.g. gpt4o).
        #[arg(long)]
        llm: Option<String>,
    },
    /// Generate AI reviews aligned with the human reviewers' decisions.
    Generate {
        #[arg(long, default_value = "test")]
        split: String,
        /// Generate one review per archetype persona and paper instead.
        #[arg(long)]
        archetypes: bool,
        /// Stop after dispatching this many jobs (resume later).
        #[arg(long)]
        max_dispatch: Option<usize>,
        /// Re-run jobs that failed previously.
        #[arg(long)]
        retry_failed: bool,
    },
    /// Produce the four edit levels of human reviews.
    Edit {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        max_dispatch: Option<usize>,
    },
    /// Generate and cache anchor reviews for every manuscript.
    Anchor,
    /// Check every record against its review template.
    Validate,
    /// Score-difference statistics and edit-level analysis.
    Report,
    /// List available detectors.
    Detectors,
}

fn load(cli: &Cli) -> Result<Run> {
    let loaded = RunConfig::load(&cli.config)?;
    let mut cfg = loaded.config;
    cfg.resolve_paths(&loaded.base);
    if let Some(p) = &cli.output_dir {
        cfg.output_dir = p.clone();
    }
    if let Some(p) = &cli.dataset_root {
        cfg.dataset_root = p.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = &cli.targets {
        cfg.targets = t.clone();
    }
    if let Some(d) = &cli.detectors {
        cfg.detectors = d.clone();
    }
    cfg.normalize()?;
    Run::new(cfg, loaded.hash)
}

fn dispatch(cli: &Cli) -> Result<usize> {
    if let Command::Detectors = cli.command {
        commands::detectors();
        return Ok(0);
    }
    let run = load(cli)?;
    let rec = match &cli.command {
        Command::Score { split } => commands::score(&run, commands::check_subset(split)?)?,
        Command::Calibrate => commands::calibrate(&run)?,
        Command::Evaluate { llm } => commands::evaluate(&run, llm.as_deref())?,
        Command::Generate { split, archetypes, max_dispatch, retry_failed } => commands::generate(
            &run,
            &GenerateArgs {
                subset: commands::check_subset(split)?,
                archetypes: *archetypes,
                max_dispatch: *max_dispatch,
                retry_failed: *retry_failed,
            },
        )?,
        Command::Edit { split, limit, max_dispatch } => {
            commands::edit(&run, commands::check_subset(split)?, *limit, *max_dispatch)?
        }
        Command::Anchor => commands::anchor(&run)?,
        Command::Validate => commands::validate(&run)?,
        Command::Report => commands::report(&run)?,
        Command::Detectors => unreachable!("handled above"),
    };
    let hard = rec.hard_errors;
    run.record(rec)?;
    Ok(hard)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} hard error(s)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
