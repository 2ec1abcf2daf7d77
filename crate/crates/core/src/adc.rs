//! Sampler/quantizer model and per-step measurement uncertainty prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported resolution. Beyond this the grid step drops below the
/// f64 mantissa resolution of a full-scale value.
pub const MAX_BITS: u32 = 52;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdcError {
    #[error("non-finite analog input {0} (corrupted signal)")]
    NonFinite(f64),
    #[error("sample period must be positive and finite, got {0}")]
    SamplePeriod(f64),
    #[error("bits must be in 1..={MAX_BITS}, got {0}")]
    Bits(u32),
    #[error("full-scale range must be positive and finite, got {0}")]
    FullScale(f64),
    #[error("range minimum must be finite, got {0}")]
    RangeMin(f64),
}

/// Static description of one converter channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcChannelConfig {
    pub sample_period_s: f64,
    pub bits: u32,
    pub fsr: f64,
    #[serde(default)]
    pub range_min: f64,
}

impl AdcChannelConfig {
    pub fn new(sample_period_s: f64, bits: u32, fsr: f64, range_min: f64) -> Result<Self, AdcError> {
        let cfg = Self { sample_period_s, bits, fsr, range_min };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AdcError> {
        if !(self.sample_period_s.is_finite() && self.sample_period_s > 0.0) {
            return Err(AdcError::SamplePeriod(self.sample_period_s));
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(AdcError::Bits(self.bits));
        }
        if !(self.fsr.is_finite() && self.fsr > 0.0) {
            return Err(AdcError::FullScale(self.fsr));
        }
        if !self.range_min.is_finite() {
            return Err(AdcError::RangeMin(self.range_min));
        }
        Ok(())
    }

    fn levels(&self) -> f64 {
        2f64.powi(self.bits as i32)
    }

    /// Grid spacing (one LSB).
    pub fn step_size(&self) -> f64 {
        self.fsr / self.levels()
    }

    pub fn range_max(&self) -> f64 {
        self.range_min + self.fsr
    }
}

/// Rounds `value` to the nearest grid level (ties away from zero) and clamps
/// to the representable range. The top of the range is itself a level.
pub fn quantize(value: f64, cfg: &AdcChannelConfig) -> Result<f64, AdcError> {
    if !value.is_finite() {
        return Err(AdcError::NonFinite(value));
    }
    let step = cfg.step_size();
    let level = ((value - cfg.range_min) / step).round().clamp(0.0, cfg.levels());
    Ok(cfg.range_min + level * step)
}

/// Half an LSB: the worst-case round-off error.
pub fn quantization_uncertainty(cfg: &AdcChannelConfig) -> f64 {
    0.5 * cfg.fsr / cfg.levels()
}

/// Held samples of one channel. `initialized` becomes true once two samples
/// have been taken, so a slope is available.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdcChannelState {
    pub prev_sample: f64,
    pub curr_sample: f64,
    pub initialized: bool,
    #[serde(default)]
    samples_taken: u8,
}

impl AdcChannelState {
    pub fn new() -> Self {
        Self::default()
    }

    /// State holding two known samples, as if `prev` then `curr` had been taken.
    pub fn with_samples(prev: f64, curr: f64) -> Self {
        Self { prev_sample: prev, curr_sample: curr, initialized: true, samples_taken: 2 }
    }

    fn push(&mut self, sample: f64) {
        self.prev_sample = self.curr_sample;
        self.curr_sample = sample;
        self.samples_taken = self.samples_taken.saturating_add(1).min(2);
        self.initialized = self.samples_taken >= 2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredUncertainty {
    pub mu_sampling: f64,
    pub mu_quantization: f64,
    pub mu_total: f64,
}

impl MeasuredUncertainty {
    pub const ZERO: Self = Self { mu_sampling: 0.0, mu_quantization: 0.0, mu_total: 0.0 };
}

/// Change expected between samples, taken as the last observed slope times the
/// period (the period cancels). Zero until two samples exist.
pub fn predict_sampling_uncertainty(state: &AdcChannelState) -> f64 {
    if state.initialized {
        state.curr_sample - state.prev_sample
    } else {
        0.0
    }
}

/// Signed sum of the sampling and quantization terms.
pub fn predict_total_uncertainty(state: &AdcChannelState, cfg: &AdcChannelConfig) -> MeasuredUncertainty {
    let mu_sampling = predict_sampling_uncertainty(state);
    let mu_quantization = quantization_uncertainty(cfg);
    MeasuredUncertainty { mu_sampling, mu_quantization, mu_total: mu_sampling + mu_quantization }
}

pub fn sample_and_hold(analog: f64, state: &mut AdcChannelState, cfg: &AdcChannelConfig) -> Result<f64, AdcError> {
    let q = quantize(analog, cfg)?;
    state.push(q);
    Ok(q)
}

/// A measured channel: either a real converter or an ideal analog passthrough
/// that reports no uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensor {
    Passthrough,
    Adc { cfg: AdcChannelConfig, state: AdcChannelState },
}

impl Sensor {
    pub fn adc(cfg: AdcChannelConfig) -> Self {
        Sensor::Adc { cfg, state: AdcChannelState::new() }
    }

    /// Samples `analog` and returns the held value with its predicted uncertainty.
    pub fn sample(&mut self, analog: f64) -> Result<(f64, MeasuredUncertainty), AdcError> {
        match self {
            Sensor::Passthrough => {
                if !analog.is_finite() {
                    return Err(AdcError::NonFinite(analog));
                }
                Ok((analog, MeasuredUncertainty::ZERO))
            }
            Sensor::Adc { cfg, state } => {
                let q = sample_and_hold(analog, state, cfg)?;
                Ok((q, predict_total_uncertainty(state, cfg)))
            }
        }
    }
}
