//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("aggregation requires at least one client update")]
    EmptyUpdates,

    #[error("non-finite value detected at round {round}")]
    NonFinite { round: u64 },

    #[error("client update from {client} carries no per-step gradient log")]
    MissingAuditLog { client: usize },

    #[error("local trajectory for client {client} is missing or truncated")]
    MissingTrajectory { client: usize },

    #[error("previous iterate required to form the shifted sequence at round {round}")]
    MissingPrev { round: u64 },

    #[error("suite lacks closed-form constants needed for {what}")]
    UnknownConstants { what: &'static str },

    #[error("averaging weights degenerate: {reason}")]
    DegenerateWeights { reason: String },

    #[error("audit check `{check}` failed at round {round}: residual {residual:e} > {tolerance:e}")]
    AuditFailure {
        check: &'static str,
        round: u64,
        residual: f64,
        tolerance: f64,
    },

    #[error("malformed suite file: {0}")]
    MalformedSuite(String),

    #[error("partition input inconsistent: {0}")]
    BadPartitionInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for config-validation failures.
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
