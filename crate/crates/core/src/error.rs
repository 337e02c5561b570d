use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up for `op`.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A structural precondition on dimensions failed.
    Dimension { op: &'static str, detail: String },
    /// An operation produced a NaN or infinity.
    NonFinite { op: &'static str },
    /// Input outside the mathematical domain of `op` (log of a non-positive
    /// value, division by zero, ...).
    Domain { op: &'static str, detail: String },
    /// Index out of range.
    Index {
        what: String,
        index: usize,
        bound: usize,
    },
    /// Invalid configuration (model spec, training config, quantile levels).
    Config(String),
    /// Invalid or inconsistent data (panel contents, windows, splits).
    Data(String),
    /// A metric or numeric procedure is undefined on the given input.
    Undefined(String),
}

impl core::error::Error for Error {}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::Dimension { op, detail } => write!(f, "{op}: {detail}"),
            Error::NonFinite { op } => {
                write!(f, "{op}: produced a non-finite value")
            }
            Error::Domain { op, detail } => write!(f, "{op}: domain error: {detail}"),
            Error::Index { what, index, bound } => {
                write!(f, "index {index} out of range for {what} (bound {bound})")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Undefined(msg) => write!(f, "undefined: {msg}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
