use thiserror::Error;

/// Errors produced by the interpolation library and the study harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("points {first} and {second} coincide")]
    DuplicatePoints { first: usize, second: usize },

    #[error("point set is not a determining set for polynomials of degree {degree}")]
    NotDetermining { degree: i64 },

    #[error("interpolation system is numerically singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("condition estimate {condition:e} exceeds the limit {limit:e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("moment conditions violated: residual {residual:e} exceeds {tolerance:e}")]
    MomentViolation { residual: f64, tolerance: f64 },

    #[error("kernel quadratic form is negative ({value:e}); check the kernel sign convention")]
    NegativeQuadraticForm { value: f64 },

    #[error("kernels of the expansion and the interpolant differ")]
    KernelMismatch,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("missing fit: {0}")]
    MissingFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
