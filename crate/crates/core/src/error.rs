use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Poisson mean that must be strictly positive was not.
    #[error("degenerate lambda at index {index}: {value}")]
    DegenerateLambda { index: usize, value: f64 },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("ADMM diverged with beta = {beta}")]
    Diverged { beta: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `pwp` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Unsupported(_) => 2,
            Error::DegenerateLambda { .. } | Error::NumericalDomain(_) | Error::Diverged { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } => 1,
        }
    }
}
