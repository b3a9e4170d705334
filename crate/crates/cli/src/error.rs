use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] coopal_core::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 validation, 2 I/O, 3 internal invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(coopal_core::Error::Io(_)) | CliError::Io { .. } => 2,
            CliError::Core(coopal_core::Error::Invariant(_)) => 3,
            CliError::Core(_) | CliError::Config(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
