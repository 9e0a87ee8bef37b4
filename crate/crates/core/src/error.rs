use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("root does not depend on any differentiable leaf")]
    DetachedRoot,
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("episode generation failed: {0}")]
    Generation(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
