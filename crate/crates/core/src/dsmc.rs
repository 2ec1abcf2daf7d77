//! Scalar discrete sliding-mode control law, dual-evaluation propagation of
//! measurement uncertainty to the control signal, and the compensated law.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsmcError {
    #[error("input gain times period must be nonzero and finite (g = {g}, T = {period})")]
    Degenerate { g: f64, period: f64 },
    #[error("sample period must be positive, got {0}")]
    Period(f64),
    #[error("reaching gain must lie in (0, 1), got {0}")]
    Rho(f64),
}

/// Euler-discretized scalar plant `x' = x + f T + g u T`. The drift is
/// supplied separately to each call so the same model serves the plant and
/// any controller-side estimate of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisoModel {
    pub g: f64,
    pub period: f64,
}

impl SisoModel {
    pub fn new(g: f64, period: f64) -> Result<Self, DsmcError> {
        let m = Self { g, period };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DsmcError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(DsmcError::Period(self.period));
        }
        let gt = self.g * self.period;
        if gt == 0.0 || !gt.is_finite() {
            return Err(DsmcError::Degenerate { g: self.g, period: self.period });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub rho: f64,
    pub s: f64,
    pub x_d_curr: f64,
    pub x_d_next: f64,
}

impl LoopState {
    /// Loop state for a measured value `x` against the reference pair.
    pub fn new(rho: f64, x: f64, x_d_curr: f64, x_d_next: f64) -> Result<Self, DsmcError> {
        check_rho(rho)?;
        Ok(Self { rho, s: sliding_surface(x, x_d_curr), x_d_curr, x_d_next })
    }
}

pub fn check_rho(rho: f64) -> Result<(), DsmcError> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(DsmcError::Rho(rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatedUncertainty {
    pub mu_u: f64,
}

pub fn sliding_surface(x: f64, x_d: f64) -> f64 {
    x - x_d
}

/// Control that places `x` on the reaching law `s' = rho s` given the drift
/// estimate `f_hat`.
pub fn baseline_control(model: &SisoModel, x: f64, lp: &LoopState, f_hat: f64) -> Result<f64, DsmcError> {
    let gt = model.g * model.period;
    if gt == 0.0 || !gt.is_finite() {
        return Err(DsmcError::Degenerate { g: model.g, period: model.period });
    }
    Ok(((lp.rho - 1.0) * x - lp.rho * lp.x_d_curr - f_hat * model.period + lp.x_d_next) / gt)
}

/// Difference between the law evaluated at the uncertainty-shifted state and
/// at the measured state. Both evaluations share the same estimate model.
pub fn propagate_uncertainty<F>(
    model: &SisoModel,
    lp: &LoopState,
    x_measured: f64,
    mu_x: f64,
    f_hat_of: F,
) -> Result<PropagatedUncertainty, DsmcError>
where
    F: Fn(f64) -> f64,
{
    let u = baseline_control(model, x_measured, lp, f_hat_of(x_measured))?;
    let shifted = x_measured + mu_x;
    let u_ideal = baseline_control(model, shifted, lp, f_hat_of(shifted))?;
    Ok(PropagatedUncertainty { mu_u: u_ideal - u })
}

pub fn modified_control(u: f64, mu: PropagatedUncertainty, s: f64) -> f64 {
    u - mu.mu_u * s
}

pub fn plant_euler_step(model: &SisoModel, x: f64, u: f64, f_actual: f64) -> f64 {
    x + f_actual * model.period + model.g * u * model.period
}
