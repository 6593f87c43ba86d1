use thiserror::Error;

/// Errors raised while decoding HDDG grids, HDDM checkpoints and the small
/// text formats used by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u16, found: u16 },
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("non-finite value at payload index {index}")]
    NonFinite { index: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("division by zero: observed value is zero at cell (row {row}, col {col})")]
    DivisionByZero { row: usize, col: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("training diverged at epoch {epoch}; last finite epoch: {last_finite_epoch:?}")]
    TrainingDiverged {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },
    #[error("denoiser produced non-finite output: {0}")]
    NonFiniteOutput(String),
    #[error("sampling failed at step {step}: denoiser returned non-finite values")]
    SamplingFailed { step: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
