use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mixed parameter point kinds (half-space vs ball)")]
    MixedPointKinds,

    #[error("quadrature grid not configured for convolution family")]
    QuadratureNotConfigured,

    #[error("unsupported derivative order {order} (max {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid convolution profile: {0}")]
    InvalidProfile(String),

    #[error("convolution profile with delta = {delta} < 1 is not backed by a boundary vanishing condition; POAFD selection refused")]
    BvcUnavailable { delta: f64 },

    #[error("quadrature grid too small: estimated tail mass {tail:.3e} exceeds tolerance {tol:.3e}")]
    GridTooSmall { tail: f64, tol: f64 },

    #[error("candidate atom is degenerate under Gram-Schmidt (denominator {denominator:.3e}); escalate its order or skip")]
    DegenerateCandidate { denominator: f64 },

    #[error("dictionary exhausted: every candidate is degenerate")]
    DictionaryExhausted,

    #[error("family mismatch between signal and atom")]
    FamilyMismatch,

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("empty candidate grid")]
    EmptyGrid,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
