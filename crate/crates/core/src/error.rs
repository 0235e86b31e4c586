use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric: max |A - A^T| = {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {value:e} below -{tolerance:e}")]
    NotPositiveSemidefinite { value: f64, tolerance: f64 },

    #[error("negative power {power} of zero eigenvalue at index {index}")]
    NegativePowerOfZero { index: usize, power: f64 },

    #[error("zero eigenvalue at index {index} inside the head window")]
    ZeroEigenvalueInHead { index: usize },

    #[error("operator is singular: eigenvalue at index {index} is zero")]
    Singular { index: usize },

    #[error("eigenvalue order violated at index {index}: {previous:e} < {current:e}")]
    OrderViolation { index: usize, previous: f64, current: f64 },

    #[error("preconditioner does not share the eigenbasis of the covariance (direction {index})")]
    BasisMismatch { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("batch has no rows")]
    EmptyBatch,

    #[error("batch has no responses")]
    MissingResponses,

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("construction infeasible: {0}")]
    Infeasible(String),

    #[error("every grid point failed: {}", .0.join("; "))]
    AllPointsFailed(Vec<String>),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
