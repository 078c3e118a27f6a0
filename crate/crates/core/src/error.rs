use std::io;

use thiserror::Error;

/// Errors produced anywhere in the emulator.
#[derive(Debug, Error)]
pub enum AxError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("empty tensor")]
    EmptyTensor,

    #[error("non-finite value {value} at offset {offset}")]
    NonFinite { value: f64, offset: usize },

    #[error("invalid range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },

    #[error("invalid quantization parameters: {0}")]
    InvalidParams(String),

    #[error("signedness mismatch: lookup table is {lut}, operands are {operands}")]
    ModeMismatch {
        lut: &'static str,
        operands: &'static str,
    },

    #[error("{what}: expected {expected} bytes, found {actual}")]
    Size {
        what: String,
        expected: u64,
        actual: u64,
    },

    #[error("{what}: bad magic {found:?}, expected {expected:?}")]
    Magic {
        what: String,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = AxError> = std::result::Result<T, E>;
