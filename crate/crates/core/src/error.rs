use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("hessian is not negative definite (largest eigenvalue {max_eigenvalue:e})")]
    NotNegativeDefinite { max_eigenvalue: f64 },

    #[error("hessian contains non-finite entries")]
    NonFiniteHessian,

    #[error("log f at the mode is not finite ({0})")]
    NonFiniteModeValue(f64),

    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("log f is {value} at interrogation point {index}")]
    NonFiniteLogF { index: usize, value: f64 },

    #[error("orbit generator has {len} entries but the dimension is {dim}")]
    GeneratorTooLong { len: usize, dim: usize },

    #[error("orbit generator magnitudes must be finite and positive")]
    InvalidGenerator,

    #[error("grid contains duplicate points across orbits")]
    DuplicatePoints,

    #[error("gram matrix is not positive definite (reciprocal condition ~{rcond:e}); retry with jitter enabled")]
    GramNotPd { rcond: f64 },

    #[error("gram matrix is numerically singular (reciprocal condition {rcond:e} below machine epsilon)")]
    GramSingular { rcond: f64 },

    #[error("posterior variance is not positive ({0:e})")]
    NonPositiveVariance(f64),

    #[error("reduced FSKQ system is singular")]
    ReducedSystemSingular,

    #[error("optimization diverged from every starting point")]
    OptimizationDiverged,

    #[error("every length-scale candidate failed")]
    AllCandidatesFailed,

    #[error("calibration function is indistinguishable from its gaussian approximation on this grid")]
    DegenerateCalibration,

    #[error("all importance weights are zero")]
    AllWeightsZero,

    #[error("quadrature box has {cells:e} cells, above the limit of {limit:e}")]
    CellCountOverflow { cells: f64, limit: f64 },

    #[error("evaluator failure: {0}")]
    Evaluator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter { name, value })
    }
}
