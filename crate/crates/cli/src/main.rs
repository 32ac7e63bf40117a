mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Calibrate driver models, train the yield classifier, and run or replay
/// lane-change episodes with the MCTS planner.
#[derive(Debug, Parser)]
#[command(name = "lanechange", version)]
struct Cli {
    /// Root seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML run configuration; a manifest written by an earlier run works too.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit car-following models to recorded trials, one MLE per trial.
    Calibrate {
        /// Trial CSV (trial_id,scenario,t,v_back,dv,gap,a).
        trials: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
        model: ModelChoice,
    },
    /// Train the yield classifier from labeled features.
    TrainClassifier {
        /// Training CSV (phi,d0,v0,s_rel,v_k,v_front,label).
        data: PathBuf,
    },
    /// Run seeded closed-loop merge episodes.
    Simulate {
        /// Number of episodes.
        #[arg(short, default_value_t = 100)]
        n: usize,
        #[arg(long, value_enum, default_value_t = PredictorChoice::Vdm)]
        predictor: PredictorChoice,
        /// Classifier weights; the bundled weights when omitted.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Distributions for the VDM predictor, e.g. from `calibrate`.
        #[arg(long, value_name = "FILE")]
        distributions: Option<PathBuf>,
    },
    /// Re-plan the ego against recorded traffic and score the predictions.
    Evaluate {
        /// Replay CSV (trial_id,t,car_id,role,s,d,v,lane,length).
        replay: PathBuf,
        #[arg(long, value_enum, default_value_t = PredictorChoice::Vdm)]
        predictor: PredictorChoice,
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        distributions: Option<PathBuf>,
    },
    /// Write synthetic inputs for the other commands.
    Generate {
        #[command(subcommand)]
        what: Generate,
    },
    /// Run the command recorded in a manifest again, with its config and seed.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generate {
    /// Car-following trials with known parameters, plus held-out recordings.
    Trials {
        #[arg(long, value_enum, default_value_t = ModelChoice::Vdm)]
        model: ModelChoice,
        #[arg(long, default_value_t = 25)]
        successful: usize,
        #[arg(long, default_value_t = 25)]
        unsuccessful: usize,
    },
    /// Labeled classifier features from scripted merges.
    Classifier {
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
    },
    /// Recorded merges in replay format.
    Replay {
        #[arg(short, default_value_t = 100)]
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Idm,
    Vdm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorChoice {
    Vdm,
    IdmFixed,
    Both,
}

/// Bad invocation or unreadable input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command, cli.seed, cli.config.as_deref(), &cli.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
