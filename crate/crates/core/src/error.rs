use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("time {t} s is outside trace range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid video spec: {0}")]
    InvalidVideo(String),

    #[error("trace {id} lasts {duration} s, shorter than the minimum {min} s")]
    TraceTooShort { id: String, duration: f64, min: f64 },

    #[error("action {action} out of range for {levels} levels")]
    ActionOutOfRange { action: usize, levels: usize },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("training failed at epoch {epoch}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable short name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidTrace(_) => "invalid-trace",
            Error::TimeOutOfRange { .. } => "time-out-of-range",
            Error::InvalidVideo(_) => "invalid-video",
            Error::TraceTooShort { .. } => "trace-too-short",
            Error::ActionOutOfRange { .. } => "action-out-of-range",
            Error::EpisodeFinished => "episode-finished",
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
            Error::Training { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
