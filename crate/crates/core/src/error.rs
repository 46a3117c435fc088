use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polygon is not simple: edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),

    #[error("degenerate triangle {index}: area {area:e} below tolerance {tolerance:e}")]
    DegenerateTriangle {
        index: usize,
        area: f64,
        tolerance: f64,
    },

    #[error("alpha above admissible threshold for this subspace (u'Ku - alpha u'Mu = {value:e})")]
    AlphaAboveThreshold { value: f64 },

    #[error("geometry mismatch between fields or forms")]
    GeometryMismatch,

    #[error("eigensolver did not converge after {iterations} iterations (max residual {residual:e})")]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("need {needed} distinct eigenvalues but only {available} were computed; increase k")]
    InsufficientEigenvalues { needed: usize, available: usize },

    #[error("pole ({x}, {y}) is outside the mesh or too close to the boundary")]
    PoleOutside { x: f64, y: f64 },

    #[error("shifted operator is singular: alpha = {alpha} hits eigenvalue {eigenvalue}")]
    SingularShift { alpha: f64, eigenvalue: f64 },

    #[error("alpha = {alpha} lies in the guard band of eigenvalue {eigenvalue}")]
    AlphaInGuardBand { alpha: f64, eigenvalue: f64 },

    #[error("annulus contains {found} sample nodes, at least {needed} required; refine near the pole")]
    TooFewSamples { found: usize, needed: usize },

    #[error("asymptotic regime not reached: epsilon = {0} must be below e^-3")]
    NotAsymptotic(f64),

    #[error("scale relation violated: {0}")]
    ScaleViolation(String),

    #[error("constraint violation growth: {0}")]
    ConstraintDrift(String),

    #[error("delta = {delta} outside admissible range ({lo}, {hi})")]
    DeltaOutOfRange { delta: f64, lo: f64, hi: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
