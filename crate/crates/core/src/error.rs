//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{layer}: backward called without a matching forward")]
    BackwardWithoutForward { layer: &'static str },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("cannot convert block {index} ({kind}): hidden activations must be quantized")]
    Unconvertible { index: usize, kind: String },

    #[error("idx parse error at byte {offset}: {msg}")]
    IdxParse { offset: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("results schema error: missing column {0:?}")]
    MissingColumn(String),

    #[error("simulation session error: {0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
