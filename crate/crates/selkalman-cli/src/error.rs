//! CLI error taxonomy mapped to process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure from the model library (exit code 3).
    #[error("numerical failure: {0}")]
    Numerical(#[from] selkalman::Error),

    /// Filesystem failure (exit code 4).
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 0 success, 2 config, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}
