use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod plot;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] a3gn::Error),
    #[error("plot: {0}")]
    Plot(String),
}

#[derive(Parser)]
#[command(name = "a3gn", version, about = "Train and evaluate targeted face-impersonation attacks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a reference face embedder (the instance discriminator).
    EmbedTrain(Keys),
    /// Train the attack networks against a frozen embedder.
    Train(Keys),
    /// Write adversarial copies of a probe directory.
    Attack(Keys),
    /// Score a checkpoint on probes; white-box and optionally black-box.
    Evaluate(Keys),
    /// Overlay threshold-accuracy curves from one or more `*_curve.csv` files.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "curves.png")]
        out: PathBuf,
        /// Comma-separated legend labels, one per input.
        #[arg(long)]
        labels: Option<String>,
    },
}

#[derive(Args)]
struct Keys {
    /// Flat `key = value` file; `--key value` arguments override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides; run with an unknown key to list the valid ones.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let resolve = |name: &str, defaults: &[(&str, &str)], k: &Keys| {
        config::RunConfig::resolve(name, defaults, k.config.as_deref(), &k.overrides, env_seed.clone())
    };
    match &cli.cmd {
        Cmd::EmbedTrain(k) => commands::embed_train(&resolve("embed-train", commands::EMBED_TRAIN_KEYS, k)?),
        Cmd::Train(k) => commands::train(&resolve("train", commands::TRAIN_KEYS, k)?),
        Cmd::Attack(k) => commands::attack(&resolve("attack", commands::ATTACK_KEYS, k)?),
        Cmd::Evaluate(k) => commands::evaluate(&resolve("evaluate", commands::EVALUATE_KEYS, k)?),
        Cmd::Plot { inputs, out, labels } => {
            let labels: Option<Vec<String>> = labels.as_ref().map(|s| s.split(',').map(|l| l.trim().to_string()).collect());
            plot::plot_curves(inputs, labels.as_deref(), out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
