use thiserror::Error;

/// Errors raised by the transcription toolkit.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("time {t} outside of [{t0}, {tf}]")]
    OutOfDomain { t: f64, t0: f64, tf: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("barrier argument not strictly positive at row {row} (value {value})")]
    BarrierDomain { row: usize, value: f64 },
    #[error("operation undefined in hard-equality mode (omega = 0)")]
    HardEqualityMode,
    #[error("problem has no semi-explicit form ydot = f1(y, u, t)")]
    MissingExplicitDynamics,
    #[error("matrix factorization failed: {0}")]
    Factorization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
