//! Four scalar adaptive loops around the engine model: spark to exhaust
//! temperature, commanded fuel to cylinder fuel flow, desired air mass to
//! speed, and inlet air flow to manifold air mass. The speed loop's output is
//! the air loop's reference.
//!
//! Every loop is cast in the scalar form `x' = x + (f + a) T + g u T`.
//! Additive estimates are carried in that drift-rate form (`a = c * alpha`,
//! with `c` from [`drift_sensitivity`]) and reported in engine units.

use serde::{Deserialize, Serialize};

use super::plant::{cylinder_air_flow, torque_loss, EngineParams, PlantInputs, PlantState};
use super::{EngineError, EngineLoops, LoopId};
use crate::adaptation::{update_additive, update_multiplicative, AdditiveAdaptState, EstimateBand, MultiplicativeAdaptState};
use crate::adc::{MeasuredUncertainty, Sensor};
use crate::dsmc::{self, baseline_control, check_rho, LoopState, SisoModel};

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdaptMode {
    #[default]
    None,
    /// `kappa` acts on the estimate expressed as a drift rate of the loop state.
    Additive {
        kappa: f64,
        /// Initial estimate in engine units.
        #[serde(default)]
        initial: f64,
        #[serde(default)]
        frozen: bool,
    },
    Multiplicative {
        rho_beta: f64,
        #[serde(default = "half")]
        initial: f64,
        #[serde(default)]
        frozen: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default)]
    pub adapt: AdaptMode,
    #[serde(default)]
    pub adc_compensation: bool,
    /// `[min, max]` in input units; loop defaults apply when absent.
    #[serde(default)]
    pub actuator_limits: Option<[f64; 2]>,
    /// `[min, max]` for the estimate in engine units (or the bare factor).
    #[serde(default)]
    pub estimate_band: Option<[f64; 2]>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { rho: 0.5, adapt: AdaptMode::None, adc_compensation: false, actuator_limits: None, estimate_band: None }
    }
}

impl LoopConfig {
    pub fn validate(&self, id: LoopId) -> Result<(), EngineError> {
        check_rho(self.rho).map_err(|source| EngineError::Dsmc { id, source })?;
        let bad = |msg: String| Err(EngineError::Loop { id, msg });
        match self.adapt {
            AdaptMode::Additive { kappa, initial, .. } if !(kappa.is_finite() && kappa > 0.0) || !initial.is_finite() => {
                return bad(format!("additive gain must be positive (kappa = {kappa}, initial = {initial})"));
            }
            AdaptMode::Multiplicative { rho_beta, initial, .. } if !(rho_beta.is_finite() && rho_beta > 0.0) || !initial.is_finite() => {
                return bad(format!("multiplicative gain must be positive (rho_beta = {rho_beta}, initial = {initial})"));
            }
            _ => {}
        }
        let [lo, hi] = self.limits(id);
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return bad(format!("actuator limits [{lo}, {hi}] are empty"));
        }
        if let Some([lo, hi]) = self.estimate_band {
            EstimateBand::new(lo, hi).map_err(|source| EngineError::Adapt { id, source })?;
        }
        Ok(())
    }

    pub fn limits(&self, id: LoopId) -> [f64; 2] {
        self.actuator_limits.unwrap_or_else(|| default_actuator_limits(id))
    }
}

pub fn default_actuator_limits(id: LoopId) -> [f64; 2] {
    match id {
        LoopId::TExh => [-10.0, 40.0],
        LoopId::MdotF => [0.0, 0.02],
        LoopId::OmegaE => [f64::NEG_INFINITY, f64::INFINITY],
        LoopId::MA => [0.0, 0.1],
    }
}

/// Current estimate as used in the drift model. Additive values are drift
/// rates of the loop state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimate {
    None,
    Additive(f64),
    Multiplicative(f64),
}

impl Estimate {
    fn apply(self, f: f64) -> f64 {
        match self {
            Estimate::None => f,
            Estimate::Additive(a) => f + a,
            Estimate::Multiplicative(b) => b * f,
        }
    }
}

/// `d(drift)/d(alpha)`: converts an engine-unit additive error into a drift rate.
pub fn drift_sensitivity(id: LoopId, p: &EngineParams) -> f64 {
    match id {
        LoopId::TExh => 1.0 / p.tau_e,
        LoopId::MdotF => -1.0 / p.tau_f,
        LoopId::OmegaE => -1.0 / p.inertia_j,
        LoopId::MA => -1.0,
    }
}

/// Quantities from the measured state shared by the loop models in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopContext {
    pub afi: f64,
    pub omega_meas: f64,
}

impl LoopContext {
    pub fn from_measured(measured: &PlantState, p: &EngineParams) -> Self {
        let afr = cylinder_air_flow(measured.m_a, measured.omega_e, p) / measured.mdot_f;
        Self { afi: p.afi.at(afr), omega_meas: measured.omega_e }
    }
}

pub fn input_gain(id: LoopId, p: &EngineParams, ctx: &LoopContext) -> f64 {
    match id {
        LoopId::TExh => 7.5 * ctx.afi / p.tau_e,
        LoopId::MdotF => 1.0 / p.tau_f,
        LoopId::OmegaE => p.torque_gain / p.inertia_j,
        LoopId::MA => 1.0,
    }
}

/// Nominal drift of the loop state `x`, other states held at their measured values.
pub fn nominal_drift(id: LoopId, x: f64, p: &EngineParams, ctx: &LoopContext) -> f64 {
    match id {
        LoopId::TExh => (600.0 * ctx.afi - x) / p.tau_e,
        LoopId::MdotF => -x / p.tau_f,
        LoopId::OmegaE => -torque_loss(x) / p.inertia_j,
        LoopId::MA => -cylinder_air_flow(x, ctx.omega_meas, p),
    }
}

/// Per-loop result of one control evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCommand {
    pub s: f64,
    pub u_baseline: f64,
    pub mu_u: f64,
    pub u_modified: f64,
    pub applied: f64,
    pub saturated: bool,
}

/// Evaluates one loop: baseline law, dual-evaluation uncertainty, optional
/// compensation, actuator clamp.
#[allow(clippy::too_many_arguments)]
pub fn loop_control(
    id: LoopId,
    p: &EngineParams,
    period: f64,
    measured: &PlantState,
    reference: (f64, f64),
    cfg: &LoopConfig,
    estimate: Estimate,
    mu_x: f64,
) -> Result<LoopCommand, EngineError> {
    let ctx = LoopContext::from_measured(measured, p);
    let model = SisoModel { g: input_gain(id, p, &ctx), period };
    let x = measured.as_array()[id.index()];
    let lp = LoopState::new(cfg.rho, x, reference.0, reference.1).map_err(|source| EngineError::Dsmc { id, source })?;
    let f_hat = |z: f64| estimate.apply(nominal_drift(id, z, p, &ctx));
    let u_baseline = baseline_control(&model, x, &lp, f_hat(x)).map_err(|source| EngineError::Dsmc { id, source })?;
    let mu = dsmc::propagate_uncertainty(&model, &lp, x, mu_x, f_hat).map_err(|source| EngineError::Dsmc { id, source })?;
    let u_modified = if cfg.adc_compensation { dsmc::modified_control(u_baseline, mu, lp.s) } else { u_baseline };
    let [lo, hi] = cfg.limits(id);
    let applied = u_modified.clamp(lo, hi);
    let saturated = applied != u_modified;
    if !(u_baseline.is_finite() && mu.mu_u.is_finite() && u_modified.is_finite()) {
        return Err(EngineError::NonFinite(format!("{id} control (u = {u_baseline}, mu_u = {})", mu.mu_u)));
    }
    if saturated {
        log::trace!("{id} command {u_modified:e} saturated to {applied:e}");
    }
    Ok(LoopCommand { s: lp.s, u_baseline, mu_u: mu.mu_u, u_modified, applied, saturated })
}

pub fn texh_control(
    p: &EngineParams,
    period: f64,
    measured: &PlantState,
    reference: (f64, f64),
    cfg: &LoopConfig,
    estimate: Estimate,
    mu_x: f64,
) -> Result<LoopCommand, EngineError> {
    loop_control(LoopId::TExh, p, period, measured, reference, cfg, estimate, mu_x)
}

/// Fuel reference from the measured cylinder air flow and a desired AFR.
pub fn fuel_reference(p: &EngineParams, measured: &PlantState, afr_d: f64) -> Result<f64, EngineError> {
    if !(afr_d.is_finite() && afr_d > 0.0) {
        return Err(EngineError::Trajectory(format!("desired AFR must be positive, got {afr_d}")));
    }
    Ok(cylinder_air_flow(measured.m_a, measured.omega_e, p) / afr_d)
}

/// `afr_d` holds the desired AFR at this and the next step.
pub fn fuel_control(
    p: &EngineParams,
    period: f64,
    measured: &PlantState,
    afr_d: (f64, f64),
    cfg: &LoopConfig,
    estimate: Estimate,
    mu_x: f64,
) -> Result<LoopCommand, EngineError> {
    let reference = (fuel_reference(p, measured, afr_d.0)?, fuel_reference(p, measured, afr_d.1)?);
    loop_control(LoopId::MdotF, p, period, measured, reference, cfg, estimate, mu_x)
}

/// Produces the desired manifold air mass.
pub fn speed_control(
    p: &EngineParams,
    period: f64,
    measured: &PlantState,
    reference: (f64, f64),
    cfg: &LoopConfig,
    estimate: Estimate,
    mu_x: f64,
) -> Result<LoopCommand, EngineError> {
    loop_control(LoopId::OmegaE, p, period, measured, reference, cfg, estimate, mu_x)
}

/// `m_a_desired` is held for both the current and next reference sample.
pub fn airflow_control(
    p: &EngineParams,
    period: f64,
    measured: &PlantState,
    m_a_desired: f64,
    cfg: &LoopConfig,
    estimate: Estimate,
    mu_x: f64,
) -> Result<LoopCommand, EngineError> {
    loop_control(LoopId::MA, p, period, measured, (m_a_desired, m_a_desired), cfg, estimate, mu_x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Estimator {
    None,
    Additive { state: AdditiveAdaptState, frozen: bool },
    Multiplicative { state: MultiplicativeAdaptState, frozen: bool },
}

#[derive(Debug, Clone)]
struct LoopRuntime {
    id: LoopId,
    cfg: LoopConfig,
    sensitivity: f64,
    estimator: Estimator,
    band: Option<EstimateBand>,
}

impl LoopRuntime {
    fn estimate(&self) -> Estimate {
        match self.estimator {
            Estimator::None => Estimate::None,
            Estimator::Additive { state, .. } => Estimate::Additive(state.alpha_hat),
            Estimator::Multiplicative { state, .. } => Estimate::Multiplicative(state.beta_hat),
        }
    }

    fn engine_units(&self) -> Option<f64> {
        match self.estimator {
            Estimator::None => None,
            Estimator::Additive { state, .. } => Some(state.alpha_hat / self.sensitivity),
            Estimator::Multiplicative { state, .. } => Some(state.beta_hat),
        }
    }

    /// Returns true when the band clamped the new estimate.
    fn adapt(&mut self, s: f64, f_nominal: f64, period: f64) -> Result<bool, EngineError> {
        let id = self.id;
        let err = |source| EngineError::Adapt { id, source };
        match &mut self.estimator {
            Estimator::None => Ok(false),
            Estimator::Additive { frozen: true, .. } | Estimator::Multiplicative { frozen: true, .. } => Ok(false),
            Estimator::Additive { state, .. } => {
                *state = update_additive(state, s, period).map_err(err)?;
                if let Some(band) = self.band {
                    let (v, hit) = band.clamp(state.alpha_hat);
                    state.alpha_hat = v;
                    return Ok(hit);
                }
                Ok(false)
            }
            Estimator::Multiplicative { state, .. } => {
                *state = update_multiplicative(state, f_nominal, s, period).map_err(err)?;
                if let Some(band) = self.band {
                    let (v, hit) = band.clamp(state.beta_hat);
                    state.beta_hat = v;
                    return Ok(hit);
                }
                Ok(false)
            }
        }
    }
}

/// Desired values for one step: `(current, next)` per tracked quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineReferences {
    pub t_exh: (f64, f64),
    pub afr: (f64, f64),
    pub omega_e: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutputs {
    pub inputs: PlantInputs,
    pub m_a_desired: f64,
    pub measured: PlantState,
    pub mu_x: [MeasuredUncertainty; 4],
    /// `(x_d(i), x_d(i+1))` per loop, indexed by [`LoopId::index`].
    pub references: [(f64, f64); 4],
    pub commands: [LoopCommand; 4],
    /// Estimates used for this step's commands, in engine units.
    pub estimates: [Option<f64>; 4],
    /// Additive estimates as drift rates of the loop state, used for this step.
    pub drift_estimates: [Option<f64>; 4],
    pub band_clamped: [bool; 4],
}

impl ControllerOutputs {
    pub fn surfaces(&self) -> [f64; 4] {
        self.commands.map(|c| c.s)
    }

    pub fn mu_u(&self) -> [f64; 4] {
        self.commands.map(|c| c.mu_u)
    }
}

/// Stateful four-loop controller including its sensors.
#[derive(Debug, Clone)]
pub struct EngineController {
    params: EngineParams,
    period: f64,
    loops: Vec<LoopRuntime>,
    sensors: Vec<Sensor>,
}

impl EngineController {
    /// `bands` bound each estimate in engine units (or the bare factor) when
    /// the loop config sets no band of its own.
    pub fn new(
        params: EngineParams,
        period: f64,
        cfgs: &EngineLoops<LoopConfig>,
        sensors: EngineLoops<Sensor>,
        bands: EngineLoops<Option<EstimateBand>>,
    ) -> Result<Self, EngineError> {
        params.validate()?;
        if !(period.is_finite() && period > 0.0) {
            return Err(EngineError::Param(format!("sample period must be positive, got {period}")));
        }
        let mut loops = Vec::with_capacity(4);
        for id in LoopId::ALL {
            let cfg = *cfgs.get(id);
            cfg.validate(id)?;
            let sensitivity = drift_sensitivity(id, &params);
            let band = cfg.estimate_band.map(|[lo, hi]| EstimateBand { lo, hi }).or(*bands.get(id));
            let (estimator, band) = match cfg.adapt {
                AdaptMode::None => (Estimator::None, None),
                AdaptMode::Additive { kappa, initial, frozen } => {
                    let state = AdditiveAdaptState { alpha_hat: sensitivity * initial, kappa, alpha_true: None };
                    let band = band.map(|b| {
                        let (a, c) = (sensitivity * b.lo, sensitivity * b.hi);
                        EstimateBand { lo: a.min(c), hi: a.max(c) }
                    });
                    (Estimator::Additive { state, frozen }, band)
                }
                AdaptMode::Multiplicative { rho_beta, initial, frozen } => {
                    let state = MultiplicativeAdaptState { beta_hat: initial, rho_beta, beta_true: None };
                    (Estimator::Multiplicative { state, frozen }, band)
                }
            };
            loops.push(LoopRuntime { id, cfg, sensitivity, estimator, band });
        }
        let sensors = LoopId::ALL.iter().map(|&id| sensors.get(id).clone()).collect();
        Ok(Self { params, period, loops, sensors })
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn config(&self, id: LoopId) -> &LoopConfig {
        &self.loops[id.index()].cfg
    }

    /// Current estimates in engine units.
    pub fn estimates(&self) -> [Option<f64>; 4] {
        LoopId::ALL.map(|id| self.loops[id.index()].engine_units())
    }

    /// Additive gain of a loop, if it adapts additively.
    pub fn kappa(&self, id: LoopId) -> Option<f64> {
        match self.loops[id.index()].estimator {
            Estimator::Additive { state, .. } => Some(state.kappa),
            _ => None,
        }
    }

    /// Samples the analog state, evaluates the loops in cascade order and
    /// advances the estimates.
    pub fn step(&mut self, analog: &PlantState, refs: &EngineReferences) -> Result<ControllerOutputs, EngineError> {
        let p = &self.params;
        let analog_arr = analog.as_array();
        let mut meas = [0.0; 4];
        let mut mu_x = [MeasuredUncertainty::ZERO; 4];
        for id in LoopId::ALL {
            let k = id.index();
            let (q, mu) = self.sensors[k].sample(analog_arr[k]).map_err(|source| EngineError::Adc { id, source })?;
            meas[k] = q;
            mu_x[k] = mu;
        }
        let measured = PlantState::from_array(meas);

        let blank = LoopCommand { s: 0.0, u_baseline: 0.0, mu_u: 0.0, u_modified: 0.0, applied: 0.0, saturated: false };
        let mut commands = [blank; 4];
        let mut references = [(0.0, 0.0); 4];
        let estimates = self.estimates();
        let drift_estimates = LoopId::ALL.map(|id| match self.loops[id.index()].estimate() {
            Estimate::Additive(a) => Some(a),
            _ => None,
        });
        for id in LoopId::EXECUTION_ORDER {
            let k = id.index();
            let reference = match id {
                LoopId::OmegaE => refs.omega_e,
                LoopId::MA => {
                    let m = commands[LoopId::OmegaE.index()].applied;
                    (m, m)
                }
                LoopId::TExh => refs.t_exh,
                LoopId::MdotF => (fuel_reference(p, &measured, refs.afr.0)?, fuel_reference(p, &measured, refs.afr.1)?),
            };
            references[k] = reference;
            let rt = &self.loops[k];
            commands[k] = loop_control(id, p, self.period, &measured, reference, &rt.cfg, rt.estimate(), mu_x[k].mu_total)?;
        }

        let ctx = LoopContext::from_measured(&measured, p);
        let mut band_clamped = [false; 4];
        for id in LoopId::ALL {
            let k = id.index();
            let f_nominal = nominal_drift(id, meas[k], p, &ctx);
            band_clamped[k] = self.loops[k].adapt(commands[k].s, f_nominal, self.period)?;
            if band_clamped[k] {
                log::debug!("{id} estimate clamped to its band");
            }
        }

        let inputs = PlantInputs {
            delta_spark: commands[LoopId::TExh.index()].applied,
            mdot_fc: commands[LoopId::MdotF.index()].applied,
            mdot_ai: commands[LoopId::MA.index()].applied,
        };
        Ok(ControllerOutputs {
            inputs,
            m_a_desired: commands[LoopId::OmegaE.index()].applied,
            measured,
            mu_x,
            references,
            commands,
            estimates,
            drift_estimates,
            band_clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::plant::{step as plant_step, Injection, UncertaintyInjection};
    use approx::assert_relative_eq;

    const T: f64 = 0.02;

    fn state() -> PlantState {
        PlantState { t_exh: 790.0, mdot_f: 0.00062, omega_e: 128.0, m_a: 0.0057 }
    }

    fn passthrough() -> EngineLoops<Sensor> {
        EngineLoops { t_exh: Sensor::Passthrough, mdot_f: Sensor::Passthrough, omega_e: Sensor::Passthrough, m_a: Sensor::Passthrough }
    }

    fn unlimited() -> LoopConfig {
        LoopConfig { actuator_limits: Some([f64::NEG_INFINITY, f64::INFINITY]), ..LoopConfig::default() }
    }

    #[test]
    fn fuel_reference_example() {
        let p = EngineParams::default();
        let mut ms = state();
        // pick m_a so the measured air flow is 0.0147 kg/s at this speed
        let target = 0.0147;
        let (mut lo, mut hi) = (0.0, 0.05);
        for _ in 0..200 {
            ms.m_a = 0.5 * (lo + hi);
            if cylinder_air_flow(ms.m_a, ms.omega_e, &p) < target {
                lo = ms.m_a;
            } else {
                hi = ms.m_a;
            }
        }
        assert_relative_eq!(fuel_reference(&p, &ms, 14.7).unwrap(), 0.001, max_relative = 1e-12);
        assert!(matches!(fuel_reference(&p, &ms, 0.0), Err(EngineError::Trajectory(_))));
    }

    #[test]
    fn steady_speed_needs_loss_torque() {
        let p = EngineParams::default();
        let ms = PlantState { omega_e: 0.0, ..state() };
        let c = speed_control(&p, T, &ms, (0.0, 0.0), &unlimited(), Estimate::None, 0.0).unwrap();
        assert_relative_eq!(c.applied, 100.0 / 30000.0, max_relative = 1e-14);
        let ms = state();
        let c = speed_control(&p, T, &ms, (128.0, 128.0), &unlimited(), Estimate::None, 0.0).unwrap();
        assert_relative_eq!(c.applied, torque_loss(128.0) / 30000.0, max_relative = 1e-14);
    }

    #[test]
    fn air_balance_at_fixed_point() {
        let p = EngineParams::default();
        let ms = state();
        let c = airflow_control(&p, T, &ms, ms.m_a, &LoopConfig::default(), Estimate::Additive(0.0), 0.0).unwrap();
        assert_relative_eq!(c.applied, cylinder_air_flow(ms.m_a, ms.omega_e, &p), max_relative = 1e-12);
    }

    #[test]
    fn negative_air_command_saturates() {
        let p = EngineParams::default();
        let ms = state();
        let c = airflow_control(&p, T, &ms, 0.0, &LoopConfig::default(), Estimate::None, 0.0).unwrap();
        assert!(c.u_modified < 0.0);
        assert_eq!(c.applied, 0.0);
        assert!(c.saturated);
    }

    #[test]
    fn texh_equilibrium_on_target() {
        let p = EngineParams::default();
        let ms = state();
        let c = texh_control(&p, T, &ms, (ms.t_exh, ms.t_exh), &LoopConfig::default(), Estimate::None, 0.0).unwrap();
        let inputs = PlantInputs { delta_spark: c.applied, mdot_fc: ms.mdot_f, mdot_ai: 0.0 };
        let next = plant_step(&ms, &inputs, &UncertaintyInjection::default(), &p, T).unwrap().state;
        assert_relative_eq!(next.t_exh, ms.t_exh, max_relative = 1e-14);
    }

    #[test]
    fn single_loop_reaching_law_with_known_offset() {
        // plant carries an exhaust offset; the loop knows it exactly
        let p = EngineParams::default();
        let alpha = 35.0;
        let inj = UncertaintyInjection { t_exh: Injection::Additive { alpha }, ..Default::default() };
        let ms = PlantState { t_exh: 798.0, ..state() };
        let est = Estimate::Additive(drift_sensitivity(LoopId::TExh, &p) * alpha);
        let c = texh_control(&p, T, &ms, (800.0, 801.0), &LoopConfig::default(), est, 0.0).unwrap();
        assert!(!c.saturated);
        let inputs = PlantInputs { delta_spark: c.applied, mdot_fc: ms.mdot_f, mdot_ai: 0.01 };
        let next = plant_step(&ms, &inputs, &inj, &p, T).unwrap().state;
        assert!((next.t_exh - 801.0 - 0.5 * c.s).abs() <= 1e-12 * 801.0);

        let inj = UncertaintyInjection { mdot_f: Injection::Additive { alpha: 1e-4 }, ..Default::default() };
        let est = Estimate::Additive(drift_sensitivity(LoopId::MdotF, &p) * 1e-4);
        let c = loop_control(LoopId::MdotF, &p, T, &ms, (0.0006, 0.0006), &LoopConfig::default(), est, 0.0).unwrap();
        let inputs = PlantInputs { delta_spark: 0.0, mdot_fc: c.applied, mdot_ai: 0.01 };
        let next = plant_step(&ms, &inputs, &inj, &p, T).unwrap().state;
        assert!((next.mdot_f - 0.0006 - 0.5 * c.s).abs() <= 1e-12 * 0.0006);
    }

    #[test]
    fn unit_multiplier_matches_zero_offset_bitwise() {
        let p = EngineParams::default();
        let ms = state();
        for id in LoopId::ALL {
            let cfg = LoopConfig { adc_compensation: true, ..LoopConfig::default() };
            let r = (ms.as_array()[id.index()] * 1.01, ms.as_array()[id.index()] * 1.02);
            let a = loop_control(id, &p, T, &ms, r, &cfg, Estimate::Additive(0.0), 0.3).unwrap();
            let b = loop_control(id, &p, T, &ms, r, &cfg, Estimate::Multiplicative(1.0), 0.3).unwrap();
            assert_eq!(a.applied.to_bits(), b.applied.to_bits(), "{id}");
            assert_eq!(a.mu_u.to_bits(), b.mu_u.to_bits(), "{id}");
        }
    }

    #[test]
    fn compensation_changes_only_the_correction_term() {
        let p = EngineParams::default();
        let ms = state();
        let on = LoopConfig { adc_compensation: true, ..unlimited() };
        let off = LoopConfig { adc_compensation: false, ..unlimited() };
        let a = texh_control(&p, T, &ms, (800.0, 800.0), &off, Estimate::None, 1.5).unwrap();
        let b = texh_control(&p, T, &ms, (800.0, 800.0), &on, Estimate::None, 1.5).unwrap();
        assert_eq!(a.u_baseline, b.u_baseline);
        assert_eq!(a.applied, a.u_baseline);
        assert_eq!(b.u_baseline - b.u_modified, b.mu_u * b.s);
    }

    #[test]
    fn controller_cascades_speed_into_air() {
        let p = EngineParams::default();
        let cfgs = EngineLoops {
            t_exh: LoopConfig::default(),
            mdot_f: LoopConfig::default(),
            omega_e: LoopConfig::default(),
            m_a: LoopConfig::default(),
        };
        let mut ctl = EngineController::new(p, T, &cfgs, passthrough(), EngineLoops::default()).unwrap();
        let refs = EngineReferences { t_exh: (800.0, 800.0), afr: (14.7, 14.7), omega_e: (130.0, 131.0) };
        let out = ctl.step(&state(), &refs).unwrap();
        let ma = LoopId::MA.index();
        assert_eq!(out.references[ma], (out.m_a_desired, out.m_a_desired));
        assert_eq!(out.surfaces()[ma], state().m_a - out.m_a_desired);
    }

    #[test]
    fn additive_estimates_report_in_engine_units() {
        let p = EngineParams::default();
        let add = LoopConfig { adapt: AdaptMode::Additive { kappa: 0.03, initial: 20.0, frozen: false }, ..LoopConfig::default() };
        let cfgs = EngineLoops { t_exh: add, mdot_f: add, omega_e: add, m_a: add };
        let ctl = EngineController::new(p, T, &cfgs, passthrough(), EngineLoops::default()).unwrap();
        for e in ctl.estimates() {
            assert_relative_eq!(e.unwrap(), 20.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn frozen_estimates_do_not_move() {
        let p = EngineParams::default();
        let add = LoopConfig { adapt: AdaptMode::Additive { kappa: 0.03, initial: 1.0, frozen: true }, ..LoopConfig::default() };
        let cfgs = EngineLoops { t_exh: add, mdot_f: LoopConfig::default(), omega_e: LoopConfig::default(), m_a: LoopConfig::default() };
        let mut ctl = EngineController::new(p, T, &cfgs, passthrough(), EngineLoops::default()).unwrap();
        let refs = EngineReferences { t_exh: (700.0, 700.0), afr: (14.7, 14.7), omega_e: (130.0, 130.0) };
        let before = ctl.estimates();
        ctl.step(&state(), &refs).unwrap();
        assert_eq!(ctl.estimates(), before);
    }

    #[test]
    fn band_clamp_is_reported() {
        let p = EngineParams::default();
        let add = LoopConfig {
            adapt: AdaptMode::Additive { kappa: 1e-6, initial: 0.0, frozen: false },
            estimate_band: Some([-1.0, 1.0]),
            ..LoopConfig::default()
        };
        let cfgs = EngineLoops { t_exh: add, mdot_f: LoopConfig::default(), omega_e: LoopConfig::default(), m_a: LoopConfig::default() };
        let mut ctl = EngineController::new(p, T, &cfgs, passthrough(), EngineLoops::default()).unwrap();
        let refs = EngineReferences { t_exh: (700.0, 700.0), afr: (14.7, 14.7), omega_e: (130.0, 130.0) };
        ctl.step(&state(), &refs).unwrap();
        let out = ctl.step(&state(), &refs).unwrap();
        assert!(out.band_clamped[0]);
        assert_relative_eq!(ctl.estimates()[0].unwrap().abs(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn invalid_config_names_the_loop() {
        let p = EngineParams::default();
        let bad = LoopConfig { rho: 1.5, ..LoopConfig::default() };
        let cfgs = EngineLoops { t_exh: LoopConfig::default(), mdot_f: LoopConfig::default(), omega_e: bad, m_a: LoopConfig::default() };
        let err = EngineController::new(p, T, &cfgs, passthrough(), EngineLoops::default()).unwrap_err();
        assert!(err.to_string().starts_with("omega_e"), "{err}");
    }
}
