use thiserror::Error;

/// Errors surfaced by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes cannot be combined by the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (ids out of range, duplicate tokens, bad files).
    #[error("data error: {0}")]
    Data(String),

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The CTC alignment lattice is empty for this (input length, label) pair.
    #[error("ctc infeasible: input length {input_len} is below the required minimum {required} for {labels} labels")]
    CtcInfeasible {
        input_len: usize,
        required: usize,
        labels: usize,
    },

    /// Unusable raw input (too-short audio, unsupported sample rate, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    /// The training loop hit its divergence guard.
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
