use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected involving node `{0}`")]
    Cycle(String),

    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),

    #[error("layer skip at `{child}` (layer {child_layer}): parent `{parent}` is at layer {parent_layer}")]
    LayerSkip {
        child: String,
        child_layer: usize,
        parent: String,
        parent_layer: usize,
    },

    #[error("node `{child}` references unknown parent `{parent}`")]
    DanglingParent { child: String, parent: String },

    #[error("node `{0}` declared more than once")]
    DuplicateNode(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
