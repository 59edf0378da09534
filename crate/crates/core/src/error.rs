use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("matrix is not a rotation (orthonormality error {0:.3e})")]
    NotARotation(f64),
    #[error("skeleton mismatch: expected {expected} joints, got {actual}")]
    SkeletonMismatch { expected: usize, actual: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("motion is empty")]
    EmptyMotion,
    #[error("anchor frame {anchor} out of range for motion of {len} frames")]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("heading undefined: body faces along the up axis at frame {frame}")]
    GimbalDegenerate { frame: usize },
    #[error("invalid corpus config: {0}")]
    ConfigInvalid(String),
    #[error("corpus is empty: {0}")]
    CorpusEmpty(String),
    #[error("script sampling reached a dead end at label {label} after {attempts} attempts")]
    DeadEnd { label: usize, attempts: usize },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionUnsupported { found: u32, supported: u32 },
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("the transition label cannot be used as an action")]
    TransitionLabelRejected,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("requested length {requested} exceeds the maximum of {max} frames")]
    LengthOverflow { requested: usize, max: usize },
    #[error("invalid model config: {0}")]
    ModelConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NaNLoss { epoch: usize, batch: usize },
    #[error("checkpoint label set does not match (checkpoint {checkpoint}, expected {expected})")]
    LabelSetMismatch { checkpoint: String, expected: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("pipeline invariant violated at step {step}: {message}")]
    Invariant { step: usize, message: String },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
