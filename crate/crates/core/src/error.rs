use thiserror::Error;

pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("exponential overflow: {quantity}[{index}] = {value} exceeds {limit}")]
    ExponentialOverflow {
        quantity: &'static str,
        index: usize,
        value: f64,
        limit: f64,
    },

    #[error("finite-difference probe at ({row}, {col}) produced a non-finite energy")]
    NonFiniteProbe { row: usize, col: usize },

    #[error("brute-force oracle is capped at {cap} tokens, got {n}")]
    TooLarge { n: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
