mod artifacts;
mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{ReportInputs, Split};
use config::RunConfig;

/// Attentive mixture-density event models: simulate account activity, train,
/// evaluate, and detect coordinated account groups.
///
/// Log verbosity follows RUST_LOG (default: info).
#[derive(Parser)]
#[command(name = "amdn", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration (sections: scenario, train, detection, supervised, hawkes).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a planted-group Hawkes scenario: events.jsonl, labels.json, manifest.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model: checkpoint.json, train_log.json, timing.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Event log (.jsonl, or .csv with columns seq,account,ts).
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-event NLL, time NLL and type accuracy on one split of the data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// The event log the checkpoint was trained on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Also fit a factorized Hawkes model on the training split and report its NLL.
        #[arg(long)]
        hawkes: bool,
        /// Write the metrics JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster account embeddings, flag the most mutually influential cluster and score accounts.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// labels.json with a `labels` map from account id to group membership.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Add cross-validated logistic-regression scores (needs --labels).
        #[arg(long)]
        supervised: bool,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Account influence matrix (CSV, counts CSV, JSON) and PageRank ranking.
    Influence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge earlier outputs into summary.json plus epochs.tsv, roc.tsv and heatmap.tsv.
    Report {
        /// Directory written by `train`.
        #[arg(long)]
        train_dir: Option<PathBuf>,
        /// Report written by `detect`.
        #[arg(long)]
        detect: Option<PathBuf>,
        /// Directory written by `influence`.
        #[arg(long)]
        influence_dir: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), common.seed)
}

fn run(cli: Cli) -> Result<()> {
    let written = match &cli.command {
        Command::Simulate { common, out } => commands::simulate(&load(common)?, out)?,
        Command::Train { common, data, out } => commands::train_cmd(&load(common)?, data, out)?,
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            hawkes,
            out,
        } => {
            let text = commands::eval_cmd(&load(common)?, checkpoint, data, *split, *hawkes, out.as_deref())?;
            // a closed pipe (`| head`) is not an error for a report on stdout
            let _ = writeln!(std::io::stdout(), "{text}");
            out.iter().cloned().collect()
        }
        Command::Detect {
            common,
            checkpoint,
            data,
            labels,
            supervised,
            out,
        } => commands::detect_cmd(&load(common)?, checkpoint, data, labels.as_deref(), *supervised, out)?,
        Command::Influence {
            common,
            checkpoint,
            data,
            out,
        } => commands::influence_cmd(&load(common)?, checkpoint, data, out)?,
        Command::Report {
            train_dir,
            detect,
            influence_dir,
            out,
        } => commands::report_cmd(
            &ReportInputs {
                train_dir: train_dir.as_deref(),
                detect: detect.as_deref(),
                influence_dir: influence_dir.as_deref(),
            },
            out,
        )?,
    };
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
