use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error in {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("rendering error on ray {ray}: {message}")]
    Render { ray: usize, message: String },

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dataset(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Dataset { .. } | Error::Io { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Diff(diffcore::DiffError::Divergence { .. }) => 4,
            Error::Checkpoint(_) => 5,
            Error::Render { .. } | Error::Diff(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
