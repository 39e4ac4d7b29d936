use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },
    #[error("unsupported {format} variant: {reason}")]
    Unsupported { format: &'static str, reason: String },
    #[error("coordinate ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]")]
    Domain { x: f64, y: f64, max_x: f64, max_y: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("phantom configuration produced no branches")]
    EmptyScene,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint does not match network topology: {0}")]
    CheckpointMismatch(String),
    #[error("missing input: {0}")]
    MissingInput(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
