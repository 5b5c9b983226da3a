use thiserror::Error;

/// Failures of the tensor/autodiff layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match buffer length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("ragged rows")]
    Ragged,
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a 2-D tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: index {index} out of range ({bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("row {row} has norm below {eps:e}")]
    ZeroNormRow { row: usize, eps: f64 },
    #[error("unknown variable id {0}")]
    UnknownVar(usize),
}

/// Failures of the loss terms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("covariance needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("alignment needs at least 2 domains in the batch, got {0}")]
    TooFewDomains(usize),
    #[error("domain {domain} has {count} samples in the batch; alignment needs at least 2")]
    DomainTooSmall { domain: usize, count: usize },
    #[error("domain id list has {ids} entries for {rows} feature rows")]
    DomainCount { ids: usize, rows: usize },
    #[error("distillation weight is positive but no teacher features were supplied")]
    MissingTeacher,
    #[error("loss weight {name} = {value} must be finite and non-negative")]
    BadWeight { name: &'static str, value: f64 },
}

/// Failures of the Fourier routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FourierError {
    #[error("empty signal")]
    Empty,
    #[error("signal length {len} does not match shape {shape:?}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("unsupported rank {0}; expected 1 or 2 dimensions per channel")]
    Rank(usize),
}
