use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported channel count {0}: only mono audio is accepted")]
    Channel(u16),

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("STFT configuration is not invertible: {0}")]
    NonInvertible(String),

    #[error("band layout error: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample rate {got} Hz does not match the model rate {expected} Hz")]
    SampleRate { expected: u32, got: u32 },

    #[error("weight manifest mismatch: {0}")]
    Manifest(String),

    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { need: usize, got: usize },

    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),

    #[error("branch count mismatch: {0} real vs {1} fake")]
    BranchCount(usize, usize),

    #[error("feature structure mismatch: {0}")]
    Structure(String),

    #[error("silent input: {0}")]
    SilentInput(String),

    #[error("comparison graph is disconnected: components {0:?}")]
    Connectivity(Vec<Vec<String>>),

    #[error("degenerate comparisons: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
