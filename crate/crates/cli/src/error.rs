use std::io;
use std::path::{Path, PathBuf};

use cwgan_core::error::CheckpointError;
use cwgan_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn from_io(err: io::Error, path: &Path) -> Self {
        if err.kind() == io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::Io {
                context: path.display().to_string(),
                source: err,
            }
        }
    }

    /// 2 usage, 3 missing input, 4 unusable checkpoint or phase order, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Incompatible(_) => 4,
            CliError::Core(e) => match e {
                Error::Config(_) => 2,
                Error::PhaseOrder(_) | Error::Checkpoint(_) => 4,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}

/// Core errors with a missing file attached get exit code 3 instead of 1.
pub fn with_path(err: Error, path: &Path) -> CliError {
    match err {
        Error::Io(e) | Error::Checkpoint(CheckpointError::Io(e)) => CliError::from_io(e, path),
        other => CliError::Core(other),
    }
}
