use alloc::string::String;

use crate::entropy::CoderError;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("value {value} at index {index} outside truncation range [{lo}, {hi}]; truncate first")]
    OutOfRange {
        index: usize,
        value: f32,
        lo: f32,
        hi: f32,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input {rows}x{cols} is smaller than the codec minimum of {min}x{min}")]
    InputTooSmall { rows: usize, cols: usize, min: usize },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("model hash mismatch: bitstream was produced by {expected:016x}, model is {found:016x}")]
    HashMismatch { expected: u64, found: u64 },
    #[error("malformed bitstream: {0}")]
    MalformedBitstream(String),
    #[error("entropy coder: {0}")]
    Coder(#[from] CoderError),
    #[error("empty sample")]
    EmptySample,
    #[error("no centroid for class {0}")]
    MissingCentroid(u32),
    #[error("training data has no {0} features")]
    MissingArch(&'static str),
}
