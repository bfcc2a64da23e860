//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The variants map onto the
//! CLI exit codes: parameter/config problems exit 2, numeric failures
//! (divergence, non-convergence, invalid square roots) exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied value violates a documented precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A numeric invariant failed at runtime (NaN/Inf, negative radicand, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative routine exhausted its budget before reaching tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A randomized search failed to certify its target threshold.
    #[error("search failure: {0}")]
    SearchFailure(String),

    /// A mathematical invariant that the algorithm guarantees was violated;
    /// this always indicates a bug or numerically hostile input, never a
    /// user error.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Malformed configuration file or CLI combination.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Toml(_) => 2,
            _ => 3,
        }
    }
}
