use alloc::string::String;

/// Errors raised by the engine and the analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("riccati iteration did not converge (residual {residual:e})")]
    RiccatiNotConverged { residual: f64 },
    #[error("empty trial log")]
    EmptyLog,
    #[error("replay log exhausted at index {0}")]
    ReplayExhausted(usize),
    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate variance")]
    DegenerateVariance,
}

pub type Result<T> = core::result::Result<T, Error>;
