//! Experiment harness: meta-data collection, frontier search, meta-training
//! and safe-BO campaigns, with every artifact written under a directory keyed
//! by the config hash.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, Method, Profile};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] sambo::env::EnvError),
    #[error(transparent)]
    Gp(#[from] sambo::GpError),
    #[error(transparent)]
    Calibration(#[from] sambo::calibration::CalibrationError),
    #[error("frontier search ({target}): {message}")]
    Frontier { target: &'static str, message: String },
    #[error("meta-training ({target}): {source}")]
    Meta {
        target: &'static str,
        #[source]
        source: sambo::meta::MetaError,
    },
    #[error("{method} on task {task}, seed {seed}: {source}")]
    Run {
        method: Method,
        task: usize,
        seed: usize,
        #[source]
        source: sambo::safe_bo::SafeBoError,
    },
    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
