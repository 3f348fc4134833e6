//! Command-line front end: `svformer <train|eval|profile|noise-eval|gradcheck>`.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data or
//! checkpoint error, 4 numerical failure (non-finite values, failed
//! gradient check).

pub mod commands;
pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use svformer_core::Error;

pub use commands::Options;
pub use config::{load_config, parse_config, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "svformer", version, about = "Spiking video transformer: train, evaluate and profile")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration (defaults to the tiny profile).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set checkpoint=PATH`.
    #[arg(long, global = true)]
    pub checkpoint: Option<String>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train on the configured dataset and write checkpoints and metrics.
    Train,
    /// Evaluate a checkpoint on the test set (plain and frame-shuffled).
    Eval,
    /// Count synaptic operations and estimate energy.
    Profile,
    /// Accuracy under Gaussian and salt-and-pepper noise.
    NoiseEval,
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Profile => "profile",
            Command::NoiseEval => "noise-eval",
            Command::Gradcheck => "gradcheck",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Format { .. } | Error::Io(_) | Error::ParamMismatch(_) => EXIT_DATA,
        Error::NonFinite(_) | Error::Backward(_) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn execute(cli: &Cli, opts: &Options) -> Result<i32, Error> {
    let mut overrides = cli.overrides.clone();
    if let Some(c) = &cli.checkpoint {
        overrides.push(format!("checkpoint={}", toml::Value::String(c.clone())));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Train => {
            commands::train(&cfg, opts)?;
        }
        Command::Eval => {
            commands::eval(&cfg, opts)?;
        }
        Command::Profile => {
            commands::profile(&cfg, opts)?;
        }
        Command::NoiseEval => {
            commands::noise_eval(&cfg, opts)?;
        }
        Command::Gradcheck => {
            if !commands::gradcheck(&cfg, opts)?.passed {
                eprintln!("error: gradient check failed");
                return Ok(EXIT_NUMERIC);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Entry point shared by the binary and tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let opts = Options {
        root: run::output_root(),
        quiet: cli.quiet,
    };
    match execute(&cli, &opts) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
