//! Closed-loop stepping of a scenario into a trace, plus paired A/B runs and
//! directory sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsError, SignalMetrics, TrackedSignal};
use super::scenario::{scalar_loop_config, EngineSetup, ScalarSetup, Scenario};
use super::trace::Trace;
use super::trajectory::TrajectorySampler;
use super::HarnessError;
use crate::adaptation::{update_additive, update_multiplicative, EstimateBand, LyapunovMonitor};
use crate::adc::Sensor;
use crate::dsmc::{self, baseline_control, LoopState, SisoModel};
use crate::engine::control::{drift_sensitivity, AdaptMode, EngineController, EngineReferences, LoopConfig};
use crate::engine::plant::{self, air_fuel_ratio, Injection};
use crate::engine::{EngineError, EngineLoops, LoopId};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario's metrics window start.
    pub skip_settle_s: Option<f64>,
    /// Abort on the first estimate-band clamp or Lyapunov monitor violation.
    pub strict_invariants: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Plant states clamped at zero.
    pub plant_clamps: u64,
    pub actuator_saturations: u64,
    pub estimate_clamps: u64,
    pub lyapunov_violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub name: String,
    pub sample_period_s: f64,
    pub skip_settle_s: f64,
    pub trace: Trace,
    pub signals: Vec<TrackedSignal>,
    /// Absent when the metrics window is empty.
    pub metrics: BTreeMap<String, Option<SignalMetrics>>,
    pub events: EventCounts,
    pub warnings: Vec<String>,
}

impl ScenarioResult {
    pub fn metric(&self, signal: &str) -> Option<SignalMetrics> {
        self.metrics.get(signal).copied().flatten()
    }
}

/// Canonical signal set for engine scenarios.
pub fn engine_signals() -> Vec<TrackedSignal> {
    vec![
        TrackedSignal::new("afr", "afr", "afr_d"),
        TrackedSignal::new("t_exh", "t_exh", "t_exh_d"),
        TrackedSignal::new("omega_e", "omega_e", "omega_e_d"),
        TrackedSignal::new("mdot_f", "mdot_f", "mdot_f_d"),
        TrackedSignal::new("m_a", "m_a", "m_a_d"),
    ]
}

pub fn scalar_signals() -> Vec<TrackedSignal> {
    vec![TrackedSignal::new("x", "x", "x_d")]
}

/// Canonical engine trace header.
pub fn engine_columns() -> Vec<String> {
    let mut c = vec!["t".to_string()];
    let names = LoopId::ALL.map(|id| id.state_name());
    c.extend(names.iter().map(|n| n.to_string()));
    c.extend(names.iter().map(|n| format!("{n}_meas")));
    c.extend(names.iter().map(|n| format!("{n}_d")));
    c.extend(["afr", "afr_d"].map(String::from));
    c.extend(names.iter().map(|n| format!("s_{n}")));
    c.extend(["delta_spark", "mdot_fc", "mdot_ai"].map(String::from));
    c.extend(names.iter().map(|n| format!("mu_x_{n}")));
    c.extend(LoopId::ALL.map(|id| format!("mu_u_{}", id.control_name())));
    c.extend(names.iter().map(|n| format!("est_{n}")));
    c.extend(names.iter().map(|n| format!("lyap_v_{n}")));
    c.extend(names.iter().map(|n| format!("lyap_dv_{n}")));
    c
}

/// Canonical scalar trace header.
pub fn scalar_columns() -> Vec<String> {
    ["t", "x", "x_meas", "x_d", "s", "u_baseline", "u", "mu_x", "mu_u", "est", "lyap_v", "lyap_dv"].map(String::from).to_vec()
}

fn numeric(step: usize, what: impl Into<String>) -> HarnessError {
    HarnessError::Numeric { step, what: what.into() }
}

fn engine_error(step: usize, e: EngineError) -> HarnessError {
    match e {
        EngineError::NonFinite(_) | EngineError::Adc { .. } => numeric(step, e.to_string()),
        other => HarnessError::Config(other.to_string()),
    }
}

/// Default anti-windup band: ten times the true value's magnitude, or none
/// when the truth is zero or of the other kind.
fn default_band(mode: &AdaptMode, injection: &Injection) -> Option<EstimateBand> {
    let scale = match (mode, injection) {
        (AdaptMode::Additive { .. }, Injection::Additive { alpha }) => alpha.abs(),
        (AdaptMode::Multiplicative { .. }, Injection::Multiplicative { beta }) => beta.abs(),
        (AdaptMode::Multiplicative { .. }, Injection::None) => 1.0,
        _ => 0.0,
    };
    (scale > 0.0).then(|| EstimateBand { lo: -10.0 * scale, hi: 10.0 * scale })
}

/// True additive drift error in the estimator's units, when the monitor applies.
fn monitored_truth(mode: &AdaptMode, injection: &Injection) -> Option<f64> {
    match (mode, injection) {
        (AdaptMode::Additive { .. }, Injection::Additive { alpha }) => Some(*alpha),
        (AdaptMode::Additive { .. }, Injection::None) => Some(0.0),
        _ => None,
    }
}

struct Monitor {
    inner: LyapunovMonitor,
    truth_drift: f64,
}

struct Invariants {
    strict: bool,
    events: EventCounts,
}

impl Invariants {
    fn band(&mut self, step: usize, what: &str) -> Result<(), HarnessError> {
        self.events.estimate_clamps += 1;
        if self.strict {
            return Err(HarnessError::Invariant { step, what: format!("{what} estimate clamped to its band") });
        }
        Ok(())
    }

    fn lyapunov(&mut self, step: usize, what: &str, before: u64, m: &LyapunovMonitor) -> Result<(), HarnessError> {
        if m.violations() > before {
            self.events.lyapunov_violations += 1;
            if self.strict {
                return Err(HarnessError::Invariant { step, what: format!("{what} Lyapunov difference increased") });
            }
        }
        Ok(())
    }
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioResult, HarnessError> {
    run_scenario_with(sc, &RunOptions::default())
}

pub fn run_scenario_with(sc: &Scenario, opts: &RunOptions) -> Result<ScenarioResult, HarnessError> {
    sc.validate()?;
    let skip = opts.skip_settle_s.unwrap_or(sc.skip_settle_s);
    if !(skip.is_finite() && skip >= 0.0) {
        return Err(HarnessError::Config(format!("settle skip must be non-negative, got {skip}")));
    }
    let mut inv = Invariants { strict: opts.strict_invariants, events: EventCounts::default() };
    let mut warnings = Vec::new();
    let (trace, signals) = match (&sc.engine, &sc.scalar) {
        (Some(e), _) => (run_engine(sc, e, &mut inv, &mut warnings)?, engine_signals()),
        (_, Some(s)) => (run_scalar(sc, s, &mut inv)?, scalar_signals()),
        _ => unreachable!("validated"),
    };
    let mut metrics = BTreeMap::new();
    for sig in &signals {
        let m = match compute_metrics(&trace, sig, skip) {
            Ok(m) => Some(m),
            Err(MetricsError::EmptyWindow(_)) => None,
            Err(e) => return Err(e.into()),
        };
        metrics.insert(sig.name.clone(), m);
    }
    let ev = inv.events;
    if ev.estimate_clamps + ev.lyapunov_violations > 0 {
        log::warn!("{}: {} estimate clamps, {} Lyapunov monitor violations", sc.name, ev.estimate_clamps, ev.lyapunov_violations);
    }
    Ok(ScenarioResult {
        name: sc.name.clone(),
        sample_period_s: sc.sample_period_s,
        skip_settle_s: skip,
        trace,
        signals,
        metrics,
        events: ev,
        warnings,
    })
}

fn run_engine(sc: &Scenario, e: &EngineSetup, inv: &mut Invariants, warnings: &mut Vec<String>) -> Result<Trace, HarnessError> {
    let period = sc.sample_period_s;
    let steps = sc.steps()?;
    if let Some(w) = e.params.period_warning(period) {
        log::warn!("{}: {w}", sc.name);
        warnings.push(w);
    }
    let injections = e.injection.as_array();
    let mut sensors: EngineLoops<Sensor> =
        EngineLoops { t_exh: Sensor::Passthrough, mdot_f: Sensor::Passthrough, omega_e: Sensor::Passthrough, m_a: Sensor::Passthrough };
    let mut bands: EngineLoops<Option<EstimateBand>> = EngineLoops::default();
    let mut monitors: Vec<Option<Monitor>> = Vec::new();
    for id in LoopId::ALL {
        if let Some(a) = e.adc.get(id) {
            *sensors.get_mut(id) = Sensor::adc(a.channel(period));
        }
        let cfg: &LoopConfig = e.loops.get(id);
        *bands.get_mut(id) = default_band(&cfg.adapt, &injections[id.index()]);
        let monitor = match (cfg.adapt, monitored_truth(&cfg.adapt, &injections[id.index()])) {
            (AdaptMode::Additive { kappa, .. }, Some(alpha)) => Some(Monitor {
                inner: LyapunovMonitor::new(kappa, sc.lyapunov_tolerance).map_err(|e| HarnessError::Config(e.to_string()))?,
                truth_drift: drift_sensitivity(id, &e.params) * alpha,
            }),
            _ => None,
        };
        monitors.push(monitor);
    }
    let mut ctl = EngineController::new(e.params.clone(), period, &e.loops, sensors, bands).map_err(|err| engine_error(0, err))?;
    let tr = &e.trajectories;
    let t_exh_d = TrajectorySampler::new(tr.t_exh.clone(), period, steps, sc.seed, 0);
    let afr_d = TrajectorySampler::new(tr.afr.clone(), period, steps, sc.seed, 1);
    let omega_d = TrajectorySampler::new(tr.omega_e.clone(), period, steps, sc.seed, 2);

    let mut trace = Trace::new(engine_columns());
    trace.rows.reserve(steps);
    let mut x = e.initial;
    for i in 0..steps {
        let refs = EngineReferences { t_exh: t_exh_d.at_step(i), afr: afr_d.at_step(i), omega_e: omega_d.at_step(i) };
        let out = ctl.step(&x, &refs).map_err(|err| engine_error(i, err))?;

        let mut lyap_v = [f64::NAN; 4];
        let mut lyap_dv = [f64::NAN; 4];
        for id in LoopId::ALL {
            let k = id.index();
            if out.band_clamped[k] {
                inv.band(i, id.state_name())?;
            }
            if out.commands[k].saturated {
                inv.events.actuator_saturations += 1;
            }
            if let (Some(m), Some(a_hat)) = (monitors[k].as_mut(), out.drift_estimates[k]) {
                let before = m.inner.violations();
                let sample = m.inner.observe(out.commands[k].s, m.truth_drift - a_hat);
                lyap_v[k] = sample.v;
                lyap_dv[k] = sample.delta_v.unwrap_or(f64::NAN);
                inv.lyapunov(i, id.state_name(), before, &m.inner)?;
            }
        }

        let mut row = Vec::with_capacity(trace.columns.len());
        row.push(i as f64 * period);
        row.extend(x.as_array());
        row.extend(out.measured.as_array());
        row.extend(out.references.map(|r| r.0));
        row.push(air_fuel_ratio(&x, &e.params));
        row.push(refs.afr.0);
        row.extend(out.surfaces());
        row.extend([out.inputs.delta_spark, out.inputs.mdot_fc, out.inputs.mdot_ai]);
        row.extend(out.mu_x.map(|m| m.mu_total));
        row.extend(out.mu_u());
        row.extend(out.estimates.map(|v| v.unwrap_or(f64::NAN)));
        row.extend(lyap_v);
        row.extend(lyap_dv);
        trace.rows.push(row);

        let next = plant::step(&x, &out.inputs, &e.injection, &e.params, period).map_err(|err| engine_error(i, err))?;
        inv.events.plant_clamps += u64::from(next.clamped_omega) + u64::from(next.clamped_m_a);
        x = next.state;
    }
    Ok(trace)
}

fn run_scalar(sc: &Scenario, s: &ScalarSetup, inv: &mut Invariants) -> Result<Trace, HarnessError> {
    let period = sc.sample_period_s;
    let steps = sc.steps()?;
    let cfg = scalar_loop_config(&s.control);
    let model = SisoModel::new(s.input_gain, period).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut sensor = match s.adc {
        Some(a) => Sensor::adc(a.channel(period)),
        None => Sensor::Passthrough,
    };
    let band = cfg.estimate_band.map(|[lo, hi]| EstimateBand { lo, hi }).or(default_band(&cfg.adapt, &s.injection));
    let mut monitor = match (cfg.adapt, monitored_truth(&cfg.adapt, &s.injection)) {
        (AdaptMode::Additive { kappa, .. }, Some(alpha)) => Some(Monitor {
            inner: LyapunovMonitor::new(kappa, sc.lyapunov_tolerance).map_err(|e| HarnessError::Config(e.to_string()))?,
            truth_drift: alpha,
        }),
        _ => None,
    };
    let mut alpha_hat = 0.0;
    let mut beta_hat = 1.0;
    match cfg.adapt {
        AdaptMode::Additive { initial, .. } => alpha_hat = initial,
        AdaptMode::Multiplicative { initial, .. } => beta_hat = initial,
        AdaptMode::None => {}
    }
    let drift = s.drift;
    let actual = |x: f64| match s.injection {
        Injection::None => drift.eval(x),
        Injection::Additive { alpha } => drift.eval(x) + alpha,
        Injection::Multiplicative { beta } => beta * drift.eval(x),
    };
    let traj = TrajectorySampler::new(s.trajectory.clone(), period, steps, sc.seed, 0);
    let [lo, hi] = cfg.limits(LoopId::MA);

    let mut trace = Trace::new(scalar_columns());
    trace.rows.reserve(steps);
    let mut x = s.initial;
    for i in 0..steps {
        let (xd, xd1) = traj.at_step(i);
        let (xm, mu_x) = sensor.sample(x).map_err(|e| numeric(i, e.to_string()))?;
        let lp = LoopState::new(cfg.rho, xm, xd, xd1).map_err(|e| HarnessError::Config(e.to_string()))?;
        let f_hat = |z: f64| match cfg.adapt {
            AdaptMode::None => drift.eval(z),
            AdaptMode::Additive { .. } => drift.eval(z) + alpha_hat,
            AdaptMode::Multiplicative { .. } => beta_hat * drift.eval(z),
        };
        let u_base = baseline_control(&model, xm, &lp, f_hat(xm)).map_err(|e| numeric(i, e.to_string()))?;
        let mu = dsmc::propagate_uncertainty(&model, &lp, xm, mu_x.mu_total, f_hat).map_err(|e| numeric(i, e.to_string()))?;
        let u_mod = if cfg.adc_compensation { dsmc::modified_control(u_base, mu, lp.s) } else { u_base };
        let u = u_mod.clamp(lo, hi);
        if u != u_mod {
            inv.events.actuator_saturations += 1;
        }
        if !(u.is_finite() && mu.mu_u.is_finite()) {
            return Err(numeric(i, format!("control not finite (u = {u}, mu_u = {})", mu.mu_u)));
        }

        let (est, drift_est) = match cfg.adapt {
            AdaptMode::None => (f64::NAN, None),
            AdaptMode::Additive { .. } => (alpha_hat, Some(alpha_hat)),
            AdaptMode::Multiplicative { .. } => (beta_hat, None),
        };
        let (mut lv, mut ldv) = (f64::NAN, f64::NAN);
        if let (Some(m), Some(a_hat)) = (monitor.as_mut(), drift_est) {
            let before = m.inner.violations();
            let sample = m.inner.observe(lp.s, m.truth_drift - a_hat);
            lv = sample.v;
            ldv = sample.delta_v.unwrap_or(f64::NAN);
            inv.lyapunov(i, "scalar", before, &m.inner)?;
        }
        trace.rows.push(vec![i as f64 * period, x, xm, xd, lp.s, u_base, u, mu_x.mu_total, mu.mu_u, est, lv, ldv]);

        let adapt_err = |e: crate::adaptation::AdaptError| HarnessError::Config(e.to_string());
        let clamp = |v: f64| band.map_or((v, false), |b| b.clamp(v));
        match cfg.adapt {
            AdaptMode::Additive { kappa, frozen: false, .. } => {
                let st = crate::adaptation::AdditiveAdaptState { alpha_hat, kappa, alpha_true: None };
                let (v, hit) = clamp(update_additive(&st, lp.s, period).map_err(adapt_err)?.alpha_hat);
                alpha_hat = v;
                if hit {
                    inv.band(i, "scalar")?;
                }
            }
            AdaptMode::Multiplicative { rho_beta, frozen: false, .. } => {
                let st = crate::adaptation::MultiplicativeAdaptState { beta_hat, rho_beta, beta_true: None };
                let (v, hit) = clamp(update_multiplicative(&st, drift.eval(xm), lp.s, period).map_err(adapt_err)?.beta_hat);
                beta_hat = v;
                if hit {
                    inv.band(i, "scalar")?;
                }
            }
            _ => {}
        }

        x = dsmc::plant_euler_step(&model, x, u, actual(x));
        if !x.is_finite() {
            return Err(numeric(i, format!("plant state not finite: {x}")));
        }
    }
    Ok(trace)
}

/// Baseline and compensated variants of a scenario, after checking that they
/// differ in nothing but the compensation flags and the name.
pub fn ab_variants(sc: &Scenario) -> Result<(Scenario, Scenario), HarnessError> {
    let mut base = sc.with_compensation(false);
    base.name = format!("{}.baseline", sc.name);
    let mut comp = sc.with_compensation(true);
    comp.name = format!("{}.compensated", sc.name);
    let strip = |s: &Scenario| -> Result<toml::Value, HarnessError> {
        let mut v = toml::Value::try_from(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        strip_keys(&mut v, &["adc_compensation", "name"]);
        Ok(v)
    };
    if strip(&base)? != strip(&comp)? {
        return Err(HarnessError::Config("A/B variants differ beyond the compensation flags".into()));
    }
    Ok((base, comp))
}

fn strip_keys(v: &mut toml::Value, keys: &[&str]) {
    match v {
        toml::Value::Table(t) => {
            for k in keys {
                t.remove(*k);
            }
            for (_, child) in t.iter_mut() {
                strip_keys(child, keys);
            }
        }
        toml::Value::Array(a) => a.iter_mut().for_each(|c| strip_keys(c, keys)),
        _ => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub baseline: SignalMetrics,
    pub compensated: SignalMetrics,
    /// Reduction of the mean absolute error, percent of the baseline.
    pub improvement_percent: f64,
    /// Signed change of the mean absolute error, percent of the baseline.
    pub mean_abs_error_delta_percent: f64,
    /// Signed change of the error standard deviation, percent of the baseline.
    pub std_error_delta_percent: f64,
}

impl PairComparison {
    pub fn new(baseline: SignalMetrics, compensated: SignalMetrics) -> Self {
        let delta = |b: f64, c: f64| 100.0 * (c - b) / b;
        let d_mean = delta(baseline.mean_abs_error, compensated.mean_abs_error);
        Self {
            baseline,
            compensated,
            improvement_percent: -d_mean,
            mean_abs_error_delta_percent: d_mean,
            std_error_delta_percent: delta(baseline.std_error, compensated.std_error),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbReport {
    pub name: String,
    pub baseline: ScenarioResult,
    pub compensated: ScenarioResult,
    pub pairs: BTreeMap<String, Option<PairComparison>>,
}

pub fn run_ab(sc: &Scenario, opts: &RunOptions) -> Result<AbReport, HarnessError> {
    let (a, b) = ab_variants(sc)?;
    let (ra, rb) = rayon::join(|| run_scenario_with(&a, opts), || run_scenario_with(&b, opts));
    let (baseline, compensated) = (ra?, rb?);
    let pairs = baseline
        .signals
        .iter()
        .map(|sig| {
            let p = match (baseline.metric(&sig.name), compensated.metric(&sig.name)) {
                (Some(x), Some(y)) => Some(PairComparison::new(x, y)),
                _ => None,
            };
            (sig.name.clone(), p)
        })
        .collect();
    Ok(AbReport { name: sc.name.clone(), baseline, compensated, pairs })
}

/// Scenario files (`*.toml`) of a directory in name order.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let rd = std::fs::read_dir(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|source| HarnessError::Io { path: dir.into(), source })?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "toml") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Outcome of one sweep entry, keyed by its file.
pub type SweepEntry = (PathBuf, Result<ScenarioResult, HarnessError>);

/// Runs every scenario of a directory, one per worker.
pub fn run_sweep(dir: &Path, opts: &RunOptions) -> Result<Vec<SweepEntry>, HarnessError> {
    let files = scenario_files(dir)?;
    Ok(files
        .into_par_iter()
        .map(|f| {
            let r = Scenario::load(&f).and_then(|sc| run_scenario_with(&sc, opts));
            (f, r)
        })
        .collect())
}
