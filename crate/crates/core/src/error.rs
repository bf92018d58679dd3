use thiserror::Error;

/// Failures reported by the iterative linear solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("operator is not positive definite (pAp = {curvature:e} at iteration {iteration})")]
    Indefinite { iteration: usize, curvature: f64 },
    #[error("solver did not converge after {} iterations (final relative residual {:e})", history.len().saturating_sub(1), history.last().copied().unwrap_or(f64::NAN))]
    NotConverged { history: Vec<f64> },
    #[error("solver stagnated over a full restart cycle (relative residual {:e})", history.last().copied().unwrap_or(f64::NAN))]
    Stagnated { history: Vec<f64> },
    #[error("non-positive diagonal entry {value:e} at row {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Errors produced while building scenes, stepping, or differentiating.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("element {index} is degenerate (rest measure {measure:e})")]
    DegenerateElement { index: usize, measure: f64 },
    #[error("element {0} is inverted or collapsed")]
    InvertedElement(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("local projection did not converge (residual {residual:e})")]
    ProjectionNotConverged { residual: f64 },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("step {step} failed: {reason}")]
    StepFailed { step: usize, reason: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
