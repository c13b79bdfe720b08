use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,
    #[error("sample {0} out of range [0, 1]")]
    OutOfRange(f64),
    #[error("invalid risk level {0}: must lie in (0, 1]")]
    InvalidRiskLevel(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("empty realization list")]
    EmptyRealizations,
    #[error("empty value list")]
    EmptyValues,
    #[error("no viable rollout: every candidate cost is infinite")]
    NoViableRollout,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not enough training data: {have} features, need at least {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("degenerate covariance in mixture component {0}")]
    DegenerateCovariance(usize),
    #[error("degenerate training density: p_max equals p_min")]
    DegenerateTrainingDensity,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unreachable vegetation density {target}: reached {reached} after {attempts} patch draws")]
    UnreachableDensity {
        target: f64,
        reached: f64,
        attempts: usize,
    },
    #[error("unsupported {what} schema version {found}")]
    UnsupportedVersion { what: String, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
