use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        actual: Shape,
    },
    #[error("invalid shape for {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("value out of range in {op}: {value}")]
    OutOfRange { op: &'static str, value: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("malformed data: {0}")]
    Malformed(String),
}
