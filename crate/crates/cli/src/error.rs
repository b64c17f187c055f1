use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Core(#[from] graybox::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        CliError::Format { path: path.display().to_string(), message: message.to_string() }
    }

    /// 1 usage, 2 failed check or computation, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use graybox::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Check(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Core(E::Parameter(_) | E::Usage(_)) => 1,
            CliError::Core(E::Io(_) | E::Format(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}
