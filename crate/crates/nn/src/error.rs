use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    DegenerateBatch(usize),
    #[error("2x2 max pooling needs even spatial dimensions, got {height}x{width}")]
    OddDims { height: usize, width: usize },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadRate(f64),
    #[error("backward called on `{0}` without a matching forward pass")]
    MissingCache(String),
    #[error("invalid layer configuration: {0}")]
    BadSpec(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

impl NnError {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        NnError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
