use thiserror::Error;

use crate::lmi::IndeterminateReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("malformed LMI problem: {0}")]
    MalformedProblem(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("singular transform: {0}")]
    SingularTransform(String),

    /// The solver ran out of budget without finding a verified point.
    /// This is never a proof of infeasibility.
    #[error("indeterminate: {0}")]
    Indeterminate(Box<IndeterminateReport>),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}
