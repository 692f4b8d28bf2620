use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("token layout has no shots")]
    EmptyLayout,

    #[error("invalid shot spec: frames={frames}, tokens_per_frame={tokens_per_frame}")]
    InvalidShotSpec {
        frames: usize,
        tokens_per_frame: usize,
    },

    #[error("index {index} out of bounds (len {len})")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("invalid summary index for shot {shot}: {reason}")]
    InvalidSummaryIndex { shot: usize, reason: String },

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at position {0}")]
    NonFiniteInput(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("query row {0} has no allowed keys")]
    EmptyAttentionRow(usize),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("plan does not match K/V: {0}")]
    PlanLayoutMismatch(String),

    #[error("literal-mode plans contain duplicated keys and cannot be expressed as a boolean mask")]
    UnrepresentableAsMask,

    #[error("configuration too large: {0}")]
    ConfigTooLarge(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("text contains the reserved shot delimiter: {0:?}")]
    DelimiterCollision(String),

    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),

    #[error("invalid cut list: {0}")]
    InvalidCutList(String),

    #[error("frame count mismatch: predicted {pred} vs ground truth {gt}")]
    FrameCountMismatch { pred: usize, gt: usize },

    #[error("consistency group {0} has fewer than two shots")]
    DegenerateGroup(usize),

    #[error("intra-shot consistency needs at least two frames, got {0}")]
    TooFewFrames(usize),

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("unknown segment id {0:?}")]
    UnknownSegment(String),

    #[error("i/o: {0}")]
    Io(String),
}
