use std::io;

use thiserror::Error;

use crate::datacube::DataCube;
use crate::solver::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems found while decoding an MSD stream.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"MSD1\"")]
    BadMagic([u8; 4]),
    #[error("truncated header: {got} of 16 bytes")]
    TruncatedHeader { got: usize },
    #[error("header declares a zero dimension ({height}x{width}x{bands})")]
    ZeroDimension { height: u32, width: u32, bands: u32 },
    #[error("header dimensions {height}x{width}x{bands} overflow the address space")]
    TooLarge { height: u32, width: u32, bands: u32 },
    #[error("truncated payload: expected {expected} values, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("malformed MSD stream: {0}")]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence {
        iteration: usize,
        /// Records of every iteration completed before the failure.
        trace: Vec<IterationRecord>,
    },
    #[error(
        "fixed-point estimate stalled at relative residual {residual:e} after {iterations} \
         iterations (target {tol:e})"
    )]
    EstimationFailed {
        best: Box<DataCube>,
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
