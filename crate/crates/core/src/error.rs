//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by construction, evaluation, and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimension does not match the chart dimension.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Two grids that must coincide (same dt and length) do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An index into driver components or grid points is out of range.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// A parameter fails its documented validity range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A non-finite value showed up where a finite one is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A precondition of an operation is violated (guards, refusals).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Requested catalog entry does not exist.
    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    /// Statistics were requested but every path of the ensemble exploded.
    #[error("all paths exploded; no statistics available")]
    AllPathsExploded,

    /// The requested system has no closed-form reference trajectory.
    #[error("system '{0}' has no closed-form reference")]
    NoClosedForm(String),

    /// I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV while importing a path.
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
