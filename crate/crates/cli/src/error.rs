use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] koopid::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 success, 2 configuration, 3 data, 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(koopid::Error::Config(_)) => 2,
            CliError::Core(koopid::Error::Divergence { .. } | koopid::Error::NonFinite(_)) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
