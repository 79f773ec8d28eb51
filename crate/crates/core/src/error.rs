use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum MooError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ellipsoid is numerically singular (condition number {cond:.3e} exceeds {cap:.1e})")]
    IllConditioned { cond: f64, cap: f64 },

    #[error("empty or pointlike constraint set: b_tilde = {0}")]
    EmptyConstraintSet(f64),

    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("tangent cover is unbounded: {0}")]
    UnboundedCover(String),

    #[error("point set dimension {dim} exceeds the direction-number table ({max} dimensions)")]
    DimensionTableExceeded { dim: usize, max: usize },

    #[error("coincident points at indices {0} and {1}: Riesz energy is infinite")]
    CoincidentPoints(usize, usize),

    #[error("eigenvalue solver failed: {0}")]
    EigenFailure(String),

    #[error("problem size {0} exceeds the oracle cap {1}")]
    OracleCapExceeded(usize, usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MooError>;
