use alloc::string::String;

/// Errors produced by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("need at least 2 flows to fit a normalizer, got {0}")]
    TooFewFlows(usize),
    #[error("sequence has no valid rows")]
    EmptyMask,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("objective returned a non-finite value")]
    NonFiniteValue,
    #[error("quantile {0} outside (0, 1]")]
    QuantileOutOfRange(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
