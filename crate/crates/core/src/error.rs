use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("depth {depth} in dimension {dim} needs {needed} index bits, limit is {limit}")]
    DepthTooLarge {
        depth: u32,
        dim: usize,
        needed: u32,
        limit: u32,
    },
    #[error("coordinate {0} lies outside [0, 1)")]
    CoordinateOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("adapted-grid hypotheses fail: {0}")]
    HypothesesFailed(String),
    #[error("cube {0} is not a member of the family")]
    OutsideFamily(String),
    #[error("set is not a member of the collection")]
    NotAMember,
    #[error("cube {0} has no Haar function in this system")]
    OutsideSystem(String),
    #[error("sigma-algebra has an empty atom")]
    EmptyAtom,
    #[error("filtration has no level {0}")]
    MissingLevel(u32),
    #[error("theta({0}) is not an atom of its filtration level")]
    NotAnAtom(String),
    #[error("insufficient depth: {0}")]
    DepthInsufficient(String),
    #[error("grid does not match class: {0}")]
    Mismatch(String),
    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
