//! One error type for everything the pipeline can report.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Hsi(#[from] hyperdiff_core::hsi::HsiError),
    #[error(transparent)]
    Schedule(#[from] hyperdiff_core::schedule::ScheduleError),
    #[error(transparent)]
    Ssdn(#[from] hyperdiff_core::ssdn::SsdnError),
    #[error(transparent)]
    Svit(#[from] hyperdiff_core::svit::SvitError),
    #[error(transparent)]
    Feature(#[from] hyperdiff_core::features::FeatureError),
    #[error(transparent)]
    Eval(#[from] hyperdiff_core::metrics::EvalError),
    #[error(transparent)]
    Synth(#[from] hyperdiff_core::synth::SynthError),
    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Exit code contract: 2 for configuration problems, 3 for stage
    /// failures and broken artifacts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
