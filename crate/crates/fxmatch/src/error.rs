//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("silent input: peak amplitude is zero")]
    SilentInput,
    #[error("buffer too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("unknown effect `{0}` (valid: {1})")]
    UnknownEffect(String, String),
    #[error("parameter dimension mismatch: effect `{effect}` has {expected} params, got {got}")]
    DimensionMismatch {
        effect: String,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward seed must be a scalar node")]
    NonScalarLoss,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no non-silent audio found after {0} attempts")]
    NoNonSilentAudio(usize),
    #[error("data generation failed: {0}")]
    DataGenerationFailed(String),
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("training set contains a single class")]
    SingleClass,
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("checkpoint was trained for effect `{trained}`, requested `{requested}`")]
    EffectMismatch { trained: String, requested: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | UnknownEffect(..) | DimensionMismatch { .. } => 2,
            MalformedWav(_) | UnsupportedFormat(_) | Io(_) | SilentInput | TooShort { .. }
            | NoNonSilentAudio(_) | DataGenerationFailed(_) | LengthMismatch(..)
            | SingleClass | DegenerateCovariance(_) => 3,
            VersionMismatch { .. } | CorruptCheckpoint(_) | EffectMismatch { .. } => 4,
            Numeric(_) | ShapeMismatch(_) | NonScalarLoss => 5,
        }
    }
}
