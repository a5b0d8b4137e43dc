use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the numeric and pipeline routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {component} = {value}")]
    Divergence {
        step: usize,
        component: &'static str,
        value: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate policy: {0}")]
    DegeneratePolicy(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(context: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::Shape {
        context,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
