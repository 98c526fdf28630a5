use efdr::jpeg::JpegError;
use efdr::metrics::MetricsError;
use efdr::network::{CheckpointError, NetworkError};
use efdr::pipeline::PipelineError;
use std::path::Path;
use thiserror::Error;

/// Every failure the front end reports. Usage and configuration problems
/// exit with 2, everything else with 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {message}")]
    Io { path: String, message: String },
    #[error("jpeg: {0}")]
    Jpeg(String),
    #[error("model: {0}")]
    Model(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("selftest: {0}")]
    SelfTest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// The one-line form written to stderr.
    pub fn line(&self) -> String {
        format!("efdr-error: {}", self.to_string().replace(['\n', '\r'], " "))
    }
}

impl From<JpegError> for CliError {
    fn from(e: JpegError) -> Self {
        Self::Jpeg(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(m) => Self::Config(m),
            other => Self::Model(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::Model(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => Self::Config(m),
            PipelineError::Jpeg(e) => e.into(),
            PipelineError::Network(e) => e.into(),
            PipelineError::Io { path, source } => Self::io(&path, source),
            PipelineError::Image { path, message } => Self::Io { path: path.display().to_string(), message },
            PipelineError::Dataset(m) => Self::Dataset(m),
            other => Self::Runtime(other.to_string()),
        }
    }
}
