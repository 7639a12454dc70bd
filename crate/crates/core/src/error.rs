use thiserror::Error;

/// Coarse classification used by drivers to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad parameters or incompatible inputs.
    Config,
    /// Memory or size limits.
    Resource,
    /// Blow-up or failure of a numerical procedure.
    Numerical,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("circulant embedding failed: eigenvalue {min_eigenvalue:e} at index {index} is negative")]
    Embedding { min_eigenvalue: f64, index: usize },

    #[error("resource limit: {what} requires {requested}, cap is {cap}")]
    Resource {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise too short: need {needed} increments, have {available}")]
    NoiseShortfall { needed: usize, available: usize },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("non-finite functional value at atom {atom}")]
    NonFiniteFunctional { atom: usize },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("grid incompatibility: {0}")]
    Grid(String),

    #[error("empty sample")]
    EmptySample,

    #[error("normalization failure: {0}")]
    Normalization(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Resource { .. } => ErrorCategory::Resource,
            Error::Embedding { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteFunctional { .. }
            | Error::Normalization(_) => ErrorCategory::Numerical,
            _ => ErrorCategory::Config,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
