use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("empty logits")]
    EmptyLogits,

    #[error("degenerate normalization: need at least 2 elements, got {0}")]
    DegenerateNormalization(usize),

    #[error("degenerate box: [{0}, {1}, {2}, {3}]")]
    DegenerateBox(f64, f64, f64, f64),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("kernel {kernel}x{kernel} larger than padded input {height}x{width}")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
