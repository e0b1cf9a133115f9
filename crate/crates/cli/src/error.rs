use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("cannot read or write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] coflow::Error),
    #[error("{failed} of {total} runs failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Core(e) => e.kind(),
            CliError::PartialFailure { .. } => "PartialFailure",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            key: match self {
                CliError::Config { key, .. } => Some(key.clone()),
                _ => None,
            },
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;
