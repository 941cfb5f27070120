use std::path::PathBuf;

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::config::ConfigError;
use crate::coordinator::CoordinatorError;
use crate::data::DataError;
use crate::dqn::DqnError;
use crate::env::EnvError;
use crate::indicators::IndicatorError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::ppo::PpoError;

/// Top-level error for the command layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint does not match the configured agents: {0}")]
    ShapeMismatch(String),
    #[error("missing run artifact {}", .0.display())]
    MissingArtifacts(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
