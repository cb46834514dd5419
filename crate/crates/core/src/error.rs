//! Error type shared across the solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or grid parameter is outside its admissible domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An evaluation point is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural hypothesis (e.g. ρL < 1, positive feedback margin) is violated.
    #[error("assumption violation: {0}")]
    AssumptionViolation(String),

    /// Adaptive quadrature failed to converge; carries the last estimate.
    #[error("quadrature failure: {reason} (last estimate {last_estimate:e}, error {last_error:e})")]
    Quadrature {
        reason: String,
        last_estimate: f64,
        last_error: f64,
    },

    /// Fixed-point or Picard iteration did not converge within the iteration cap.
    #[error("iteration did not converge: {context} (residual {residual:e} after {iterations} iterations)")]
    NonConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    /// An operation received a Lévy family it does not support.
    #[error("family mismatch: expected {expected}, got {got}")]
    FamilyMismatch { expected: String, got: String },

    /// A target value lies outside the attainable range of a monotone map.
    #[error("target out of range: {0}")]
    OutOfRange(String),

    /// Malformed configuration input.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 assumption violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::AssumptionViolation(_) => 4,
            _ => 3,
        }
    }
}
