use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector must be nonnegative with a strictly positive sum")]
    ZeroVector,

    #[error("matrix is not allowable: {0}")]
    NotAllowable(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("draw record did not retain its matrices")]
    MissingMatrices,

    #[error("operation is only available for d = 2 (got d = {0})")]
    UnsupportedDim(usize),

    #[error("law is not centered: stationary mean drift {0:e} exceeds tolerance")]
    NotCentered(f64),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("insufficient survivors: {got} < {needed}")]
    InsufficientSurvivors { got: u64, needed: u64 },

    #[error("hard bound violated on {count} trajectories (first: seed {seed}, index {index})")]
    BoundViolation { count: usize, seed: u64, index: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
