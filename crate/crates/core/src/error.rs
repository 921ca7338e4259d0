use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment too small: {width}x{height} px, retina needs at least {min} px per side")]
    EnvironmentTooSmall { width: usize, height: usize, min: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decoded value {value} for field {field} lies outside [0, 255]; sensory vector is corrupted")]
    CorruptedSensoryVector { field: usize, value: f64 },

    #[error("degenerate clustering input: {distinct} distinct samples for k = {k}")]
    DegenerateSamples { distinct: usize, k: usize },

    #[error("too few samples per field: {got}, field {field} needs at least {needed}")]
    TooFewSamples { field: usize, got: usize, needed: usize },

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("{artifact} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        artifact: &'static str,
        expected: String,
        found: String,
    },

    #[error("unsupported {artifact} format version {found} (expected {expected})")]
    VersionMismatch {
        artifact: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("malformed {artifact} file: {reason}")]
    Malformed { artifact: &'static str, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
