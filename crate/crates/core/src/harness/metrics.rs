//! Tracking-error statistics over a trace window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples left after skipping the first {0} s")]
    EmptyWindow(f64),
    #[error("trace has no column {0:?}")]
    MissingColumn(String),
}

/// A tracked quantity: the actual and desired trace columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedSignal {
    pub name: String,
    pub actual: String,
    pub desired: String,
}

impl TrackedSignal {
    pub fn new(name: &str, actual: &str, desired: &str) -> Self {
        Self { name: name.into(), actual: actual.into(), desired: desired.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    /// Mean of |x - x_d|.
    pub mean_abs_error: f64,
    /// Population standard deviation of x - x_d.
    pub std_error: f64,
}

pub fn error_metrics(errors: &[f64]) -> Option<SignalMetrics> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let mean_abs_error = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Some(SignalMetrics { mean_abs_error, std_error: var.sqrt() })
}

/// Statistics of `actual - desired` over rows with `t >= settle_skip_s`.
pub fn compute_metrics(trace: &Trace, signal: &TrackedSignal, settle_skip_s: f64) -> Result<SignalMetrics, MetricsError> {
    let col = |name: &str| trace.column_index(name).ok_or_else(|| MetricsError::MissingColumn(name.to_string()));
    let (it, ia, id) = (col("t")?, col(&signal.actual)?, col(&signal.desired)?);
    let cutoff = settle_skip_s - 1e-9 * settle_skip_s.abs().max(1.0);
    let errors: Vec<f64> = trace.rows.iter().filter(|r| r[it] >= cutoff).map(|r| r[ia] - r[id]).collect();
    error_metrics(&errors).ok_or(MetricsError::EmptyWindow(settle_skip_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(errors: &[f64]) -> Trace {
        let mut t = Trace::new(vec!["t".into(), "x".into(), "x_d".into()]);
        for (i, e) in errors.iter().enumerate() {
            t.rows.push(vec![i as f64 * 0.5, 1.0 + e, 1.0]);
        }
        t
    }

    #[test]
    fn constant_error() {
        let m = error_metrics(&[0.1; 8]).unwrap();
        assert!((m.mean_abs_error - 0.1).abs() <= 1e-15);
        assert!(m.std_error <= 1e-15);
    }

    #[test]
    fn alternating_error() {
        let m = error_metrics(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!((m.mean_abs_error, m.std_error), (1.0, 1.0));
    }

    #[test]
    fn window_skips_transient() {
        let sig = TrackedSignal::new("x", "x", "x_d");
        // rows at t = 0, 0.5, 1.0, 1.5
        let m = compute_metrics(&trace(&[100.0, 100.0, 2.0, -2.0]), &sig, 1.0).unwrap();
        assert_eq!((m.mean_abs_error, m.std_error), (2.0, 2.0));
    }

    #[test]
    fn empty_window_is_an_error() {
        let sig = TrackedSignal::new("x", "x", "x_d");
        assert_eq!(compute_metrics(&trace(&[1.0]), &sig, 5.0), Err(MetricsError::EmptyWindow(5.0)));
        let missing = TrackedSignal::new("y", "y", "x_d");
        assert!(matches!(compute_metrics(&trace(&[1.0]), &missing, 0.0), Err(MetricsError::MissingColumn(_))));
    }
}
