use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("rank error: expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("label error: label {label} at index {index} is outside [0, {classes})")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("optimizer error: parameter `{0}` has no gradient")]
    Optimizer(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("channel error: expected 3 channels, got {0}")]
    Channel(usize),

    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },

    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Validation(_) => 2,
            Error::Data(_)
            | Error::Format(_)
            | Error::Consistency(_)
            | Error::Protocol(_)
            | Error::Channel(_)
            | Error::Label { .. } => 3,
            Error::Numeric { .. } => 4,
            _ => 1,
        }
    }
}
