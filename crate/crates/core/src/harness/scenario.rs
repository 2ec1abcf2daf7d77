//! Scenario files (TOML) and their validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::TrajectorySpec;
use super::HarnessError;
use crate::adc::AdcChannelConfig;
use crate::engine::control::LoopConfig;
use crate::engine::plant::{EngineParams, Injection, PlantState, UncertaintyInjection};
use crate::engine::{EngineLoops, LoopId};

fn default_skip() -> f64 {
    5.0
}

fn default_lyapunov_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub sample_period_s: f64,
    /// Seeds trajectory dither; unused when no trajectory dithers.
    #[serde(default)]
    pub seed: u64,
    /// Start of the metrics window.
    #[serde(default = "default_skip")]
    pub skip_settle_s: f64,
    /// Relative slack of the Lyapunov monitor.
    #[serde(default = "default_lyapunov_tolerance")]
    pub lyapunov_tolerance: f64,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarSetup>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for exported files; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Converter resolution for one channel; the period comes from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSpec {
    pub bits: u32,
    pub fsr: f64,
    #[serde(default)]
    pub range_min: f64,
}

impl AdcSpec {
    pub fn channel(&self, period: f64) -> AdcChannelConfig {
        AdcChannelConfig { sample_period_s: period, bits: self.bits, fsr: self.fsr, range_min: self.range_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineTrajectories {
    pub t_exh: TrajectorySpec,
    pub afr: TrajectorySpec,
    pub omega_e: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSetup {
    #[serde(default)]
    pub params: EngineParams,
    pub initial: PlantState,
    /// Channels left out are ideal analog passthroughs.
    #[serde(default)]
    pub adc: EngineLoops<Option<AdcSpec>>,
    #[serde(default)]
    pub loops: EngineLoops<LoopConfig>,
    #[serde(default)]
    pub injection: UncertaintyInjection,
    pub trajectories: EngineTrajectories,
}

/// Drift `linear * x + sine * sin(x) + offset`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarDrift {
    pub linear: f64,
    pub sine: f64,
    pub offset: f64,
}

impl ScalarDrift {
    pub fn eval(&self, x: f64) -> f64 {
        self.linear * x + self.sine * x.sin() + self.offset
    }
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSetup {
    #[serde(default)]
    pub drift: ScalarDrift,
    #[serde(default = "unit_gain")]
    pub input_gain: f64,
    pub initial: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adc: Option<AdcSpec>,
    /// Actuator limits default to unbounded here.
    #[serde(default)]
    pub control: LoopConfig,
    #[serde(default)]
    pub injection: Injection,
    pub trajectory: TrajectorySpec,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let sc: Scenario = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Number of control steps; the duration must be a whole number of periods.
    pub fn steps(&self) -> Result<usize, HarnessError> {
        let n = self.duration_s / self.sample_period_s;
        let r = n.round();
        if !(n.is_finite() && (n - r).abs() <= 1e-9 * r.max(1.0)) {
            return Err(HarnessError::Config(format!(
                "duration {} s is not a whole number of {} s periods",
                self.duration_s, self.sample_period_s
            )));
        }
        Ok(r as usize)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if !(self.sample_period_s.is_finite() && self.sample_period_s > 0.0) {
            return cfg(format!("sample_period_s must be positive, got {}", self.sample_period_s));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return cfg(format!("duration_s must be non-negative, got {}", self.duration_s));
        }
        self.steps()?;
        if !(self.skip_settle_s.is_finite() && self.skip_settle_s >= 0.0) {
            return cfg(format!("skip_settle_s must be non-negative, got {}", self.skip_settle_s));
        }
        if !(self.lyapunov_tolerance.is_finite() && self.lyapunov_tolerance >= 0.0) {
            return cfg(format!("lyapunov_tolerance must be non-negative, got {}", self.lyapunov_tolerance));
        }
        let period = self.sample_period_s;
        let adc_err = |what: &str, e: crate::adc::AdcError| HarnessError::Config(format!("{what} adc: {e}"));
        match (&self.engine, &self.scalar) {
            (Some(e), None) => {
                e.params.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                e.injection.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if !e.initial.is_finite() || e.initial.omega_e < 0.0 || e.initial.m_a < 0.0 {
                    return cfg(format!("initial state must be finite with non-negative speed and air mass: {:?}", e.initial));
                }
                for id in LoopId::ALL {
                    e.loops.get(id).validate(id).map_err(|e| HarnessError::Config(e.to_string()))?;
                    if let Some(a) = e.adc.get(id) {
                        a.channel(period).validate().map_err(|err| adc_err(id.state_name(), err))?;
                    }
                }
                e.trajectories.t_exh.validate()?;
                e.trajectories.afr.validate()?;
                e.trajectories.omega_e.validate()?;
                let afr = &e.trajectories.afr;
                if afr.min_value() - afr.dither <= 0.0 {
                    return cfg("desired AFR must stay positive".into());
                }
                Ok(())
            }
            (None, Some(s)) => {
                if !(s.input_gain.is_finite() && s.input_gain != 0.0) {
                    return cfg(format!("input_gain must be finite and nonzero, got {}", s.input_gain));
                }
                if !s.initial.is_finite() {
                    return cfg("initial state must be finite".into());
                }
                let d = s.drift;
                if ![d.linear, d.sine, d.offset].iter().all(|v| v.is_finite()) {
                    return cfg("drift coefficients must be finite".into());
                }
                if s.injection.truth().is_some_and(|v| !v.is_finite()) {
                    return cfg("injected uncertainty must be finite".into());
                }
                scalar_loop_config(&s.control)
                    .validate(LoopId::MA)
                    .map_err(|e| HarnessError::Config(e.to_string().replacen("m_a", "scalar", 1)))?;
                if let Some(a) = s.adc {
                    a.channel(period).validate().map_err(|err| adc_err("scalar", err))?;
                }
                s.trajectory.validate()
            }
            (Some(_), Some(_)) => cfg("scenario must define exactly one of [engine] or [scalar], found both".into()),
            (None, None) => cfg("scenario must define one of [engine] or [scalar]".into()),
        }
    }

    /// Copy with every loop's compensation flag set to `on`.
    pub fn with_compensation(&self, on: bool) -> Scenario {
        let mut sc = self.clone();
        if let Some(e) = sc.engine.as_mut() {
            for id in LoopId::ALL {
                e.loops.get_mut(id).adc_compensation = on;
            }
        }
        if let Some(s) = sc.scalar.as_mut() {
            s.control.adc_compensation = on;
        }
        sc
    }
}

/// Scalar loops default to unbounded actuators.
pub fn scalar_loop_config(c: &LoopConfig) -> LoopConfig {
    LoopConfig { actuator_limits: Some(c.actuator_limits.unwrap_or([f64::NEG_INFINITY, f64::INFINITY])), ..*c }
}
