//! `portrait`: prepare toy datasets, train the two-stage generator, reenact
//! driven videos, evaluate, plot and time the generator.
//!
//! Errors print as `error[<category>]: <message>` on stderr and set an exit
//! code per category (see [`Category`]). `PORTRAIT_OUT` sets the default
//! output directory.

mod bench;
mod config;
mod evaluate;
mod plot;
mod prepare;
mod reenact;
mod train;
mod visualize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use portrait_core::Error as CoreError;

/// Machine-parsable error category and its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Internal = 1,
    Config = 3,
    Data = 4,
    Format = 5,
    Mode = 6,
    Io = 7,
    State = 8,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Internal => "internal",
            Category::Config => "config",
            Category::Data => "data",
            Category::Format => "format",
            Category::Mode => "mode",
            Category::Io => "io",
            Category::State => "state",
        }
    }

    fn of_core(e: &CoreError) -> Self {
        match e {
            CoreError::Config(_) => Category::Config,
            CoreError::Value(_) | CoreError::Shape(_) | CoreError::Frame { .. } | CoreError::LatentMiss { .. } => Category::Data,
            CoreError::EstimatorFit { .. } => Category::Data,
            CoreError::Mode { .. } => Category::Mode,
            CoreError::Io { .. } => Category::Io,
            CoreError::Format { .. } => Category::Format,
        }
    }
}

/// Error raised by the command layer with an explicit category.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub category: Category,
    pub message: String,
}

impl Failure {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn state(message: impl Into<String>) -> Self {
        Self::new(Category::State, message)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self::new(Category::of_core(&e), e.to_string())
    }
}

fn categorize(e: &anyhow::Error) -> Category {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.category;
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return Category::of_core(c);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Category::Io;
        }
    }
    Category::Internal
}

#[derive(Debug, Parser)]
#[command(name = "portrait", version, about = "Two-stage neural portrait generator on a synthetic face world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write toy or ingested datasets, a full toy benchmark, or the frozen toy networks.
    Prepare(prepare::Args),
    /// Run stage one, stage two or both.
    Train(train::Args),
    /// Generate one frame per driven frame from a checkpoint.
    Reenact(reenact::Args),
    /// Score generated frames against references, or compare two reports.
    Evaluate(evaluate::Args),
    /// Plot parameter-space projections and loss curves.
    Visualize(visualize::Args),
    /// Time generator forward passes.
    Bench(bench::Args),
}

/// Output directory from the flag, else `PORTRAIT_OUT`.
pub fn output_dir(flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.or_else(|| std::env::var_os("PORTRAIT_OUT").map(PathBuf::from))
        .ok_or_else(|| Failure::config("no output directory: pass --out or set PORTRAIT_OUT").into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare::run(a),
        Command::Train(a) => train::run(a),
        Command::Reenact(a) => reenact::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Visualize(a) => visualize::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = categorize(&e);
            eprintln!("error[{}]: {e:#}", category.name());
            ExitCode::from(category as u8)
        }
    }
}
