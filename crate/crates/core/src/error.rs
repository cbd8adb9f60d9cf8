use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("resource budget exceeded: {0}")]
    Resource(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (bad flags, configs or files)
    /// rather than by a failure during execution.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Configuration(_) | Error::Parse(_) | Error::Schema(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
