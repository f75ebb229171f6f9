//! Error type of the command layer and its mapping onto exit codes.

use std::path::PathBuf;

use cspm_core::error::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A flag value that clap accepted syntactically but that makes no sense.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds tolerance {tolerance:.1e}")]
    GradCheckFailed { max_rel_error: f64, tolerance: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Serialize(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 usage, 3 configuration or shape, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(CoreError::Config(_) | CoreError::Shape(_) | CoreError::Input(_)) => 3,
            CliError::Core(CoreError::Numeric(_)) | CliError::GradCheckFailed { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
