use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("invalid chunk size")]
    InvalidChunkSize,
    #[error("unnormalized input: {0}")]
    Unnormalized(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("undecodable image: {0}")]
    ImageDecode(#[from] image::ImageError),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("failed to read wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    WavFormat(String),

    #[error("video {video}: {frames} frames but {labels} labels")]
    LengthMismatch {
        video: String,
        frames: usize,
        labels: usize,
    },
    #[error("unknown video id {0}")]
    UnknownVideo(String),
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated dataset")]
    TruncatedDataset,
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("numerical overflow")]
    NumericalOverflow,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("incompatible model")]
    IncompatibleModel,
    #[error("corrupted model file: {0}")]
    CorruptModel(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
    #[error("expected {expected} recording, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("segment too short")]
    SegmentTooShort,
    #[error("invalid segment {label}: {reason}")]
    InvalidSegment { label: String, reason: String },
    #[error("insufficient beats")]
    InsufficientBeats,
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-uniform sampling: {0}")]
    NonUniformSampling(String),

    #[error("undefined correlation")]
    UndefinedCorrelation,
    #[error("length mismatch: {0} vs {1}")]
    SampleLengthMismatch(usize, usize),

    #[error("malformed likert code {code} in row {row}")]
    MalformedLikert { row: usize, code: String },
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("unknown user {0}")]
    UnknownUser(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
