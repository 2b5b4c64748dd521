use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("input too small: {0}")]
    TooSmall(String),
    #[error("dimension {dim} is not divisible by {divisor}")]
    NotDivisible { dim: usize, divisor: usize },
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: u64, what: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
