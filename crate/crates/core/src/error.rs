use thiserror::Error;

/// Errors surfaced by the library.
///
/// Variants carry enough context to be actionable from a CLI without a
/// backtrace: the offending value and, where it matters, the expected bound.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty clip: clip {clip_id} has no frames")]
    EmptyClip { clip_id: u64 },

    #[error("empty video: cannot sub-sample zero frames")]
    EmptyVideo,

    #[error("invalid class index: {index} (class count is {num_classes})")]
    InvalidClassIndex { index: usize, num_classes: usize },

    #[error("mask required for rendering: clip {clip_id}, frame {frame}, detection {detection}")]
    MaskMissing {
        clip_id: u64,
        frame: usize,
        detection: usize,
    },

    #[error("mask run-lengths sum to {sum}, expected {expected} ({width}x{height})")]
    MaskRunLength {
        width: u32,
        height: u32,
        sum: u64,
        expected: u64,
    },

    #[error("frame {frame} size {got_w}x{got_h} does not match clip size {want_w}x{want_h}")]
    FrameSizeMismatch {
        frame: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("parameter vector length {got}, model expects {want}")]
    ParamLength { got: usize, want: usize },

    #[error("input length {got} does not match expected dimension {want}")]
    DimMismatch { got: usize, want: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown encoder '{0}'")]
    UnknownEncoder(String),

    #[error("encoder tape does not belong to this encoder")]
    ForeignTape,

    #[error("encoder name '{0}' is already registered")]
    EncoderNameTaken(String),

    #[error("label {label} out of range for {num_activities} activities")]
    LabelRange { label: usize, num_activities: usize },

    #[error("dataset has no clips for split '{0}'")]
    EmptySplit(String),

    #[error("too many undecodable clips: {failed} of {total} failed (limit 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("config key '{key}': {reason}")]
    Config { key: String, reason: String },

    #[error("malformed line {line} in {path}: {reason}")]
    Jsonl {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("run directory {0} already contains outputs (pass --force to overwrite)")]
    RunDirOccupied(String),

    #[error("checkpoint {path} does not match the configured model: {reason}")]
    CheckpointMismatch { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encode/decode: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
