use alloc::string::String;

use crate::tensor::{Dims, Index3};

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("index out of dims at line {line}")]
    IndexOutOfDims { line: usize },
    #[error("duplicate triple ({},{},{})", .index.i, .index.j, .index.k)]
    DuplicateTriple { index: Index3 },
    #[error("index ({},{},{}) out of range for dims ({},{},{})", .index.i, .index.j, .index.k, .dims.i, .dims.j, .dims.k)]
    IndexOutOfRange { index: Index3, dims: Dims },
    #[error("tensor dimensions must be positive")]
    InvalidDims,
    #[error("tensor has no entries")]
    EmptyTensor,
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("degenerate split: {0} partition is empty")]
    DegenerateSplit(&'static str),
    #[error("constant values")]
    ConstantValues,
    #[error("negative value {0} under log transform")]
    NegativeUnderLog(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("trace/batch mismatch at position {0}")]
    TraceMismatch(usize),
    #[error("prediction for ({},{},{}) has no ground truth entry", .0.i, .0.j, .0.k)]
    UnknownTriple(Index3),
    #[error("zero baseline in relative change")]
    ZeroBaseline,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidFractions(_) | Error::InvalidConfig(_) => ErrorKind::Config,
            Error::NonFinite(_) | Error::ZeroBaseline => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
