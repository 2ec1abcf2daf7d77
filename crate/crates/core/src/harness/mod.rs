//! Scenario configuration, closed-loop runner, metrics and file export.

pub mod export;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod trace;
pub mod trajectory;

use std::path::PathBuf;

use thiserror::Error;

pub use metrics::{compute_metrics, SignalMetrics, TrackedSignal};
pub use runner::{run_ab, run_scenario, run_scenario_with, run_sweep, AbReport, RunOptions, ScenarioResult};
pub use scenario::Scenario;
pub use trace::Trace;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("numeric failure at step {step}: {what}")]
    Numeric { step: usize, what: String },
    #[error("invariant violated at step {step}: {what}")]
    Invariant { step: usize, what: String },
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

impl HarnessError {
    /// Process exit status for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numeric { .. } => 2,
            HarnessError::Invariant { .. } => 3,
            _ => 1,
        }
    }
}
