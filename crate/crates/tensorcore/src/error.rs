use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("convolution produces an empty output (T={len}, K={kernel}, stride={stride}, pad={pad})")]
    EmptyOutput {
        len: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
