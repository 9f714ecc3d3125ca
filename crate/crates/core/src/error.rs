use thiserror::Error;

/// Errors produced by the scoring, pruning and accounting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Dump header is malformed (magic, version or payload kind).
    #[error("format error: {0}")]
    Format(String),

    /// Dump payload is shorter or longer than the header announces.
    #[error("length error: expected {expected} payload bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    /// Token values are unusable (non-finite or outside single-precision range).
    #[error("data error: {0}")]
    Data(String),

    /// Operand shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A precondition on arguments or configuration was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// The numerical routine broke down (underflow, non-finite iterates, oracle cap).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
