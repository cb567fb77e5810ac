//! `eikt` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::{FileConfig, Overrides, RunConfig};

/// Environment variable read for the log filter, e.g. `EIKT_LOG=debug`.
const LOG_ENV: &str = "EIKT_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "eikt",
    version,
    about = "Interpretable knowledge tracing with BKT features and a TAN classifier"
)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Number of bins for mastery and the ability profiles.
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Laplace smoothing constant for the CPTs.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Learn the TAN tree from conditional mutual information.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    learn_structure: Option<bool>,
    /// Report the mean of per-student AUCs instead of the pooled AUC.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    macro_auc: Option<bool>,
    /// Directory for derived files.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean a raw log into the normalized interactions file.
    Ingest {
        /// Raw CSV log.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Read the input with the normalized column names.
        #[arg(long)]
        normalized: bool,
    },
    /// Fit BKT, the difficulty table and the TAN on all interactions.
    Train,
    /// Student-level k-fold cross-validation.
    Evaluate,
    /// Score a student history file with the trained models.
    Predict {
        /// Normalized interactions to score, in order.
        #[arg(long, value_name = "FILE")]
        history: PathBuf,
        /// Output CSV; standard output when absent.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Print the trained TAN structure and CPTs.
    Inspect {
        /// Also write the discretized features of every interaction here.
        #[arg(long, value_name = "FILE")]
        features: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.class());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> eikt::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let input = match &cli.command {
        Command::Ingest { input, .. } => input.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        folds: cli.folds,
        bins: cli.bins,
        alpha: cli.alpha,
        learn_structure: cli.learn_structure,
        macro_auc: cli.macro_auc,
        input,
        out_dir: cli.out_dir,
    };
    let cfg = RunConfig::resolve(file, overrides)?;
    log::debug!("resolved configuration: {cfg:?}");
    match cli.command {
        Command::Ingest { normalized, .. } => commands::ingest(&cfg, normalized),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Predict { history, output } => {
            commands::predict(&cfg, &history, output.as_deref())
        }
        Command::Inspect { features } => commands::inspect(&cfg, features.as_deref()),
    }
}
