use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter vectors do not share a layout.
    #[error("layout mismatch at segment `{segment}`")]
    LayoutMismatch { segment: String },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header declares {declared} values, file holds {actual}")]
    PayloadLength { declared: usize, actual: usize },

    #[error("checksum mismatch: header {expected:08x}, payload {actual:08x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dimension {dim} exceeds the full-matrix cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("objective returned a non-finite value at lambdas {lambdas:?}")]
    NonFiniteObjective { lambdas: Vec<f64> },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NotPositiveDefinite { .. } | Error::NonFiniteObjective { .. } | Error::NonFinite(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::MalformedHeader(_) | Error::PayloadLength { .. } | Error::Checksum { .. })
    }
}
