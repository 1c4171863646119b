use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),

    #[error("unsupported sample rate {0} Hz (only 16000 Hz is accepted)")]
    SampleRate(u32),

    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero-energy signal: {0}")]
    ZeroEnergy(&'static str),

    #[error("scene specification does not match its roles: {0}")]
    SceneRole(String),

    #[error("missing speaker embedding for a personalized model")]
    MissingEmbedding,

    #[error("operation not supported by this model: {0}")]
    Unsupported(String),

    #[error("not enough eligible samples for {task} mini-batch: {available} available, {needed} needed")]
    InsufficientSamples {
        task: String,
        available: usize,
        needed: usize,
    },

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("non-finite loss at step {step} ({task}): {detail}")]
    NonFiniteLoss {
        step: u64,
        task: String,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

impl Error {
    /// Short stable name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TooShort { .. } => "too_short",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::SampleRate(_) => "sample_rate",
            Error::AudioFormat(_) => "audio_format",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::ZeroEnergy(_) => "zero_energy",
            Error::SceneRole(_) => "scene_role",
            Error::MissingEmbedding => "missing_embedding",
            Error::Unsupported(_) => "unsupported",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Version { .. } => "checkpoint_version",
            Error::Corrupt(_) => "corrupt_checkpoint",
            Error::Embedding(_) => "embedding",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
        }
    }
}
