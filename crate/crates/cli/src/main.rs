//! `mwcnn`: prepare window datasets, train and evaluate, classify windows, and
//! run the built-in self checks.
//!
//! Exit codes: 0 success, 1 internal error (including diverged training),
//! 2 bad input, 3 weights incompatible with the configured architecture.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{Experiment, Overrides, RunConfig};

/// Problems with what the user supplied: config, paths, file contents.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "mwcnn", version, about = "EEG mind-wandering CNN: data preparation, training and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["2", "5", "8"]).map(|s| s.parse::<u32>().unwrap()))]
    window_seconds: Option<u32>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Output directory; overrides the paths in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a balanced, filtered, normalized window dataset out of recordings.
    Prepare(Common),
    /// Run the configured experiment and write weights, histories and a report.
    Train(Common),
    /// Classify windows with saved weights.
    Predict(Common),
    /// Check layer shapes, gradients, the optimizer and metric formulas.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_floor_pooling: bool,
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_conv_grad_offset: f64,
    },
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: c.seed,
        window_seconds: c.window_seconds,
        experiment: c.experiment,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Prepare(c) => commands::prepare(&load_config(&c)?, c.out.as_deref()).map(|_| true),
        Command::Train(c) => commands::train(&load_config(&c)?, c.out.as_deref()).map(|_| true),
        Command::Predict(c) => commands::predict(&load_config(&c)?).map(|_| true),
        Command::Verify {
            common: _,
            inject_floor_pooling,
            inject_conv_grad_offset,
        } => Ok(commands::verify(&mwcnn::verify::VerifyHooks {
            floor_pooling: inject_floor_pooling,
            conv_grad_offset: inject_conv_grad_offset,
        })),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<mwcnn::Error>() {
            return match e {
                mwcnn::Error::Fingerprint { .. } => 3,
                mwcnn::Error::Divergence { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
