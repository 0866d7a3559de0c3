use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Motion does not excite enough rotation axes for the requested estimate.
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("solver did not converge after {iterations} iterations (cost {cost:e})")]
    NotConverged { iterations: usize, cost: f64 },

    /// Angular acceleration needs both neighbours of the sample.
    #[error("sample index {index} has no central-difference neighbours (series length {len})")]
    BoundaryIndex { index: usize, len: usize },

    #[error("normal equations are singular: {0}")]
    SingularNormalEquations(String),

    #[error("fusion matrix is singular or ill-conditioned: {0}")]
    SingularFusion(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("sample rate mismatch: {0}")]
    RateMismatch(String),

    #[error("series do not overlap in time")]
    EmptyOverlap,

    #[error("{0} is out of range")]
    OutOfRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name, used in CLI error payloads and failure logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateMotion(_) => "DegenerateMotion",
            Error::NotConverged { .. } => "NotConverged",
            Error::BoundaryIndex { .. } => "BoundaryIndex",
            Error::SingularNormalEquations(_) => "SingularNormalEquations",
            Error::SingularFusion(_) => "SingularFusion",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::Format(_) => "FormatError",
            Error::RateMismatch(_) => "RateMismatch",
            Error::EmptyOverlap => "EmptyOverlap",
            Error::OutOfRange(_) => "OutOfRange",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "IoError",
        }
    }
}
