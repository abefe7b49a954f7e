use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameters, incompatible files, out-of-range inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the domain of a numerical routine.
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky failed even at the largest jitter on the ladder.
    #[error("matrix is numerically singular: non-positive pivot at index {pivot} (jitter {jitter:e})")]
    Singular { pivot: usize, jitter: f64 },

    /// Non-finite values appeared during an iterative computation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } | Error::Io { .. } => 2,
            Error::Domain(_) | Error::Singular { .. } | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
