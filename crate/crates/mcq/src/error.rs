//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("image dimensions {width}x{height} not divisible by {multiple}")]
    NotDivisible {
        width: usize,
        height: usize,
        multiple: usize,
    },

    #[error("zero-sized input: {0}")]
    Empty(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("codeword index {index} out of range for K={k} at level {level}, group {group}")]
    IndexOutOfRange {
        level: usize,
        group: usize,
        index: u32,
        k: u32,
    },

    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic bytes (expected {expected:?})")]
    BadMagic { expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("stream truncated while reading {0}")]
    Truncated(&'static str),

    #[error("codebook digest mismatch: stream expects a different codebook")]
    DigestMismatch,

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("training diverged: loss exceeded 10x the initial value for {0} consecutive epochs")]
    Diverged(usize),

    #[error("dataset too small: need at least {need} samples, got {got}")]
    DatasetTooSmall { need: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
