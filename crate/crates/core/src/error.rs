use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum FracError {
    #[error("kernel evaluated on the diagonal (x = y); use the singular quadrature path")]
    Singularity,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("linear solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    Solver { residual: f64, iterations: usize },
    #[error("inconsistent data: {0}")]
    DataInconsistency(String),
    #[error("probe scale too large: {0}")]
    ProbeScale(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FracError>;
