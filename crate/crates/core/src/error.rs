use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("operator is not hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite adjoint at step {step} ({what})")]
    NonFiniteAdjoint { step: usize, what: String },
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("unsupported regime: {0}")]
    Regime(String),
    #[error("no linear MSD regime: {0}")]
    NoLinearRegime(String),
    #[error("truncation rejected: {0}")]
    Truncation(String),
    #[error("dataset error at line {line}: {msg}")]
    Dataset { line: usize, msg: String },
    #[error("unit mismatch: expected time unit `{expected}`, file declares `{found}`")]
    UnitMismatch { expected: String, found: String },
    #[error("missing series `{0}`")]
    MissingSeries(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
