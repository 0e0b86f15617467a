use thiserror::Error;

pub type Result<T> = std::result::Result<T, RtiError>;

#[derive(Debug, Error)]
pub enum RtiError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("missing calibration for stream {0}")]
    MissingCalibration(String),

    #[error("insufficient window for stream {stream}: {usable} usable value(s), need at least 2")]
    InsufficientWindow { stream: String, usable: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<RtiError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RtiError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RtiError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        RtiError::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Wraps an error with the name of the pipeline phase that produced it.
    pub fn in_phase(self, phase: &'static str) -> Self {
        RtiError::Phase {
            phase,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (configuration, scenario or
    /// file contents) rather than failures while running.
    pub fn is_config_error(&self) -> bool {
        match self {
            RtiError::Config(_)
            | RtiError::InvalidScenario(_)
            | RtiError::InvalidLayout(_)
            | RtiError::Parse { .. } => true,
            RtiError::Phase { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
