//! Experiment harness for partial-GAE PPO: JSON configs, training runs with
//! CSV logs and checkpoints, (T, ε) sweeps, the GAE variance profiler and
//! the self-check suite behind `advest verify`.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod profile;
pub mod run;
pub mod sweep;
pub mod verify;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Unusable configuration or arguments. Exit code 2.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] advest_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Worker count for sweeps: `ADVEST_THREADS` if set, else the machine's
/// available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("ADVEST_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
