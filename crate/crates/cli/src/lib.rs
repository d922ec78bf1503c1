//! `volsr` command-line entry point. Every subcommand parses its inputs,
//! calls into `volsr-core` and writes the results.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use volsr_core::arch::{Dimensionality, Family};
use volsr_core::Error;

pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "VOLSR_OUT";

#[derive(Debug, Parser)]
#[command(name = "volsr", version, about = "Multi-slice super-resolution experiments on synthetic CT volumes")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one phantom part with its defect list.
    Phantom,
    /// Degrade a high-resolution volume.
    Degrade {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a train/test dataset and its manifest.
    Dataset,
    /// Train the `[network]` on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Super-resolve a low-resolution volume with a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A low-resolution volume header.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        /// Use a part from this manifest, normalized like training data.
        #[arg(long, requires = "part")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        part: Option<String>,
    },
    /// Score checkpoints and the cubic baseline on the held-out part.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Parameter breakdown of one network.
    Params {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        mode: Dimensionality,
        /// Slices per window for 2.5D.
        #[arg(long)]
        slices: Option<usize>,
        /// Discriminator input size for adversarial totals.
        #[arg(long, default_value_t = 128)]
        patch: usize,
    },
    /// Collate parameter, memory and (unless skipped) trained comparison tables.
    Report {
        #[arg(long)]
        skip_training: bool,
    },
}

/// An error paired with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: String) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Invalid(_)
            | Error::Shape { .. }
            | Error::Unsupported(_)
            | Error::Exists(_)
            | Error::Json { .. }
            | Error::Format { .. }
            | Error::NonFinite { .. } => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
