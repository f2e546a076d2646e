use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("surfel {index} has a non-finite parameter")]
    NonFiniteParameter { index: usize },
    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGradient { group: &'static str },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("invalid variant: {0}")]
    InvalidVariant(String),
    #[error("mixed appearance variants in scene (surfel {index})")]
    MixedVariants { index: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;
