use std::path::PathBuf;

/// Errors produced anywhere in the reduced-order-modeling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("solution diverged at t = {time} (max |value| = {max_abs:e})")]
    Divergence { time: f64, max_abs: f64 },

    #[error("requested {requested} modes but only {usable} are numerically usable")]
    Rank { requested: usize, usable: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("mode {mode} has a constant training series and cannot be scaled")]
    DegenerateScale { mode: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
