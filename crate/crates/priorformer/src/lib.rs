//! Files, configuration and the command line around `priorformer-core`.

use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;
pub mod io;
pub mod parallel;
pub mod report;

pub use config::ConfigError;

/// Everything a command can fail with. Each variant maps to its own process
/// exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        source: priorformer_core::FormatError,
    },
    #[error("{}{source}", context.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Model {
        context: Option<PathBuf>,
        source: priorformer_core::Error,
    },
    #[error("training diverged at epoch {epoch}; last finite parameters written to {}", path.display())]
    Diverged { epoch: usize, path: PathBuf },
    #[error("gradient check failed: max relative error {error:e} at {parameter} exceeds {tolerance:e}")]
    Gradient {
        error: f64,
        parameter: String,
        tolerance: f64,
    },
}

impl Failure {
    /// Attributes a core error to the file it came from.
    pub fn at(path: &Path, e: priorformer_core::Error) -> Self {
        match e {
            priorformer_core::Error::Format(source) => Failure::Format {
                path: path.to_path_buf(),
                source,
            },
            source => Failure::Model {
                context: Some(path.to_path_buf()),
                source,
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io { .. } => 3,
            Failure::Config(_) => 4,
            Failure::Format { .. } => 5,
            Failure::Model { .. } => 6,
            Failure::Diverged { .. } => 7,
            Failure::Gradient { .. } => 8,
        }
    }
}

impl From<priorformer_core::Error> for Failure {
    fn from(source: priorformer_core::Error) -> Self {
        Failure::Model { context: None, source }
    }
}
