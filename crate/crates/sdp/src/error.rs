use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("constraint matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("problem has no constraints")]
    EmptyProblem,
    #[error("verification failed: max eigenvalue residual {max_residual:e}, equality residual {eq_residual:e}")]
    VerificationFailed { max_residual: f64, eq_residual: f64 },
    #[error("solution status is {0:?}, expected Optimal")]
    NotOptimal(crate::SolveStatus),
}
