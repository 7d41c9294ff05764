use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadratic term is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("linear map of dual block {block} has no norm bound; estimate or declare one first")]
    MissingNormBound { block: usize },

    #[error("problem violates 0 != sum_i ||L_i||^2: every coupling map is zero")]
    ZeroCoupling,

    #[error("step size rejected: {0}")]
    StepSize(String),

    #[error("iteration diverged at n = {n}: {reason}")]
    Diverged { n: usize, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("function family is not coordinate-separable: {0}")]
    NonSeparable(String),

    #[error("schedule has no certifiable bound: {0}")]
    UncertifiableSchedule(String),

    #[error("quantity unavailable: {0}")]
    Unavailable(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("residuals need at least one completed step")]
    NoCompletedStep,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
