//! Surface-driven parameter adaptation for additive and multiplicative drift
//! uncertainty, estimate banding, and a Lyapunov-difference monitor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("adaptation gain must be positive and finite, got {0}")]
    Gain(f64),
    #[error("estimate band is empty or not finite: [{lo}, {hi}]")]
    Band { lo: f64, hi: f64 },
}

fn check_gain(g: f64) -> Result<(), AdaptError> {
    if g.is_finite() && g > 0.0 {
        Ok(())
    } else {
        Err(AdaptError::Gain(g))
    }
}

/// Estimate of a constant offset added to the drift. `alpha_true` is only
/// known in simulation and feeds the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveAdaptState {
    pub alpha_hat: f64,
    pub kappa: f64,
    pub alpha_true: Option<f64>,
}

impl AdditiveAdaptState {
    pub fn alpha_tilde(&self) -> Option<f64> {
        self.alpha_true.map(|a| a - self.alpha_hat)
    }
}

/// Estimate of a constant factor scaling the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeAdaptState {
    pub beta_hat: f64,
    pub rho_beta: f64,
    pub beta_true: Option<f64>,
}

pub fn update_additive(state: &AdditiveAdaptState, s: f64, period: f64) -> Result<AdditiveAdaptState, AdaptError> {
    check_gain(state.kappa)?;
    Ok(AdditiveAdaptState { alpha_hat: state.alpha_hat + period * s / state.kappa, ..*state })
}

/// `f_nominal` is the nominal drift at the measured state.
pub fn update_multiplicative(
    state: &MultiplicativeAdaptState,
    f_nominal: f64,
    s: f64,
    period: f64,
) -> Result<MultiplicativeAdaptState, AdaptError> {
    check_gain(state.rho_beta)?;
    Ok(MultiplicativeAdaptState { beta_hat: state.beta_hat + f_nominal * s * period / state.rho_beta, ..*state })
}

/// Predicted next surface value when the drift estimate is off by `alpha_tilde`.
pub fn surface_error_dynamics(s: f64, alpha_tilde: f64, rho: f64, period: f64) -> f64 {
    rho * s + period * alpha_tilde
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub v: f64,
    pub delta_v: Option<f64>,
    pub s: f64,
    pub alpha_tilde: f64,
}

pub fn lyapunov_sample(s: f64, alpha_tilde: f64, kappa: f64, prev: Option<&LyapunovSample>) -> LyapunovSample {
    let v = 0.5 * s * s + 0.5 * kappa * alpha_tilde * alpha_tilde;
    LyapunovSample { v, delta_v: prev.map(|p| v - p.v), s, alpha_tilde }
}

/// Exact expansion of the difference between two samples:
/// `-(1 - rho) s^2 + ds^2 / 2 + kappa dalpha^2 / 2`, valid when the samples
/// obey the closed-loop surface and estimate recursions.
pub fn second_order_difference(prev: &LyapunovSample, next: &LyapunovSample, rho: f64, kappa: f64) -> f64 {
    let ds = next.s - prev.s;
    let da = next.alpha_tilde - prev.alpha_tilde;
    -(1.0 - rho) * prev.s * prev.s + 0.5 * ds * ds + 0.5 * kappa * da * da
}

/// Closed interval an estimate is kept inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateBand {
    pub lo: f64,
    pub hi: f64,
}

impl EstimateBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self, AdaptError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(AdaptError::Band { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half_width: f64) -> Result<Self, AdaptError> {
        Self::new(-half_width.abs(), half_width.abs())
    }

    /// Clamped value and whether clamping happened.
    pub fn clamp(&self, v: f64) -> (f64, bool) {
        let c = v.clamp(self.lo, self.hi);
        (c, c != v)
    }
}

/// Tracks `V = s^2/2 + kappa a~^2/2` along a loop and flags steps whose
/// first-order part `dV - ds^2/2 - kappa da^2/2` is positive beyond a
/// relative tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovMonitor {
    kappa: f64,
    tolerance: f64,
    prev: Option<LyapunovSample>,
    violations: u64,
    max_first_order: f64,
}

impl LyapunovMonitor {
    pub fn new(kappa: f64, tolerance: f64) -> Result<Self, AdaptError> {
        check_gain(kappa)?;
        Ok(Self { kappa, tolerance: tolerance.abs(), prev: None, violations: 0, max_first_order: f64::NEG_INFINITY })
    }

    pub fn observe(&mut self, s: f64, alpha_tilde: f64) -> LyapunovSample {
        let sample = lyapunov_sample(s, alpha_tilde, self.kappa, self.prev.as_ref());
        if let (Some(prev), Some(dv)) = (self.prev.as_ref(), sample.delta_v) {
            let ds = sample.s - prev.s;
            let da = sample.alpha_tilde - prev.alpha_tilde;
            let first_order = dv - 0.5 * ds * ds - 0.5 * self.kappa * da * da;
            let scale = prev.v.max(sample.v);
            self.max_first_order = self.max_first_order.max(first_order);
            if first_order > self.tolerance * scale {
                self.violations += 1;
                log::debug!("lyapunov first-order increase {first_order:e} (V = {scale:e})");
            }
        }
        self.prev = Some(sample);
        sample
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn max_first_order(&self) -> f64 {
        self.max_first_order
    }
}
