use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion norm {norm} is outside [0.99, 1.01]")]
    InvalidQuaternion { norm: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sequence too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("gauss-newton did not converge after {} iterations (gradient norms {trace:?})", trace.len())]
    GaussNewton { trace: Vec<f64> },

    #[error("filter initialization failed: {0}")]
    FilterInit(String),

    #[error("root sensor `{0}` not found")]
    MissingRootSensor(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sensor `{sensor}` failed at stage {stage}: {source}")]
    Stage {
        sensor: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn at_stage(self, sensor: &str, stage: &'static str) -> Self {
        Error::Stage {
            sensor: sensor.to_string(),
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingRootSensor(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
