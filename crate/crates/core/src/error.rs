use thiserror::Error;

/// Errors raised by grid construction, assembly, solvers and instruments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty ball: no interior node within distance {radius} of {center:?}")]
    EmptyBall { center: Vec<f64>, radius: f64 },

    #[error("invalid exponent p = {0}")]
    InvalidExponent(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("ellipticity check failed for {field}: {detail}")]
    Ellipticity { field: String, detail: String },

    #[error("invalid radii schedule: {0}")]
    Schedule(String),

    #[error("condition is scale-restricted to r > 1 (got r = {0})")]
    ScaleRestricted(f64),

    #[error("weight vanishes on every sampled point")]
    ZeroWeight,

    #[error("non-positive weight {value} at {point:?}")]
    NonPositiveWeight { point: Vec<f64>, value: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e}): {detail}")]
    NoConvergence { iterations: usize, residual: f64, detail: String },

    #[error("dense oracle unavailable for {unknowns} unknowns (cap {cap}); use the matrix-free path")]
    OverCap { unknowns: usize, cap: usize },

    #[error("resolvent identity residual {residual:e} exceeds tolerance {tolerance:e}")]
    IdentityResidual { residual: f64, tolerance: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field spec `{spec}`: {detail}")]
    FieldSpec { spec: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("malformed grid data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
