use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the tensor engine, the point kernels and the network.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("max_reduce over an empty neighborhood")]
    EmptyNeighborhood,

    #[error("{op}: requested {requested} of {available} available")]
    TooMany {
        op: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("{0}: empty point cloud")]
    EmptyCloud(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
