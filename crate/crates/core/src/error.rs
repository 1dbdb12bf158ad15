use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the algorithmic core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(&'static str),
    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("duplicate clip id `{0}`")]
    DuplicateId(String),
    #[error("invalid clip record: {0}")]
    InvalidRecord(String),
    #[error("hard-negative shift range must not contain 0")]
    InvalidShiftRange,

    #[error("frame window [{start}, {end}) out of clip range 0..{len}")]
    WindowOutOfRange { start: isize, end: isize, len: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("batch size mismatch: {0} first-view vs {1} third-view vs {2} labels")]
    BatchMismatch(usize, usize, usize),
    #[error("non-finite loss at step {step} (pairs {pairs})")]
    NonFiniteLoss { step: usize, pairs: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty training stream")]
    EmptyStream,

    #[error("clip too short: {frames} frames, need at least {needed}")]
    ClipTooShort { frames: usize, needed: usize },
    #[error("too few samples: {have} distinct, need {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}
