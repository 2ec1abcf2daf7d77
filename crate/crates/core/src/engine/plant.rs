//! Four-state mean-value cold-start engine, Euler-discretized, with optional
//! additive or multiplicative drift errors injected per state.

use serde::{Deserialize, Serialize};

use super::EngineError;

/// Air-fuel influence factor on exhaust temperature: a constant, or a table
/// over air-fuel ratio interpolated linearly and held at the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Afi {
    Constant(f64),
    Table { afr: Vec<f64>, value: Vec<f64> },
}

impl Default for Afi {
    fn default() -> Self {
        Afi::Constant(1.0)
    }
}

impl Afi {
    pub fn validate(&self) -> Result<(), EngineError> {
        match self {
            Afi::Constant(v) if v.is_finite() && *v != 0.0 => Ok(()),
            Afi::Constant(v) => Err(EngineError::Param(format!("AFI must be finite and nonzero, got {v}"))),
            Afi::Table { afr, value } => {
                if afr.is_empty() || afr.len() != value.len() {
                    return Err(EngineError::Param("AFI table needs matching, non-empty afr/value columns".into()));
                }
                if afr.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(EngineError::Param("AFI table afr column must be strictly increasing".into()));
                }
                if value.iter().chain(afr).any(|v| !v.is_finite()) || value.contains(&0.0) {
                    return Err(EngineError::Param("AFI table entries must be finite and values nonzero".into()));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, afr: f64) -> f64 {
        match self {
            Afi::Constant(v) => *v,
            Afi::Table { afr: xs, value: ys } => {
                let n = xs.len();
                if !afr.is_finite() || afr >= xs[n - 1] {
                    return ys[n - 1];
                }
                if afr <= xs[0] {
                    return ys[0];
                }
                let k = xs.partition_point(|x| *x <= afr);
                let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
                y0 + (y1 - y0) * (afr - x0) / (x1 - x0)
            }
        }
    }
}

/// Surrogate fit `k1..k10` giving volumetric efficiency between roughly 0.66
/// and 0.91 for m_a in [2, 10] g and speed in [50, 300] rad/s.
pub const DEFAULT_VOL_EFF: [f64; 10] = [0.018, 0.0, 0.0, -100.0, 0.0, 0.02, 2.0, -4.8e-6, 0.0024, 0.55];

fn default_tau_e() -> f64 {
    0.5
}
fn default_tau_f() -> f64 {
    0.06
}
fn default_inertia() -> f64 {
    0.2
}
fn default_vol_eff() -> [f64; 10] {
    DEFAULT_VOL_EFF
}
fn default_torque_gain() -> f64 {
    30000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    /// Exhaust gas time constant (s).
    #[serde(default = "default_tau_e")]
    pub tau_e: f64,
    /// Fuel evaporation time constant (s).
    #[serde(default = "default_tau_f")]
    pub tau_f: f64,
    /// Rotational inertia (kg m^2).
    #[serde(default = "default_inertia")]
    pub inertia_j: f64,
    #[serde(default = "default_vol_eff")]
    pub vol_eff_coeffs: [f64; 10],
    #[serde(default)]
    pub afi: Afi,
    /// Indicated torque per kg of manifold air (N m / kg).
    #[serde(default = "default_torque_gain")]
    pub torque_gain: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            tau_e: default_tau_e(),
            tau_f: default_tau_f(),
            inertia_j: default_inertia(),
            vol_eff_coeffs: DEFAULT_VOL_EFF,
            afi: Afi::default(),
            torque_gain: default_torque_gain(),
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, v) in [("tau_e", self.tau_e), ("tau_f", self.tau_f), ("inertia_j", self.inertia_j), ("torque_gain", self.torque_gain)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EngineError::Param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.vol_eff_coeffs.iter().any(|k| !k.is_finite()) {
            return Err(EngineError::Param("volumetric efficiency coefficients must be finite".into()));
        }
        self.afi.validate()
    }

    /// Returns a warning when the period is too coarse for the fast time constants.
    pub fn period_warning(&self, period: f64) -> Option<String> {
        let limit = self.tau_e.min(self.tau_f);
        (period >= limit).then(|| format!("sample period {period} s is not below min(tau_e, tau_f) = {limit} s"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantState {
    /// Exhaust gas temperature (K).
    pub t_exh: f64,
    /// Fuel mass flow into the cylinder (kg/s).
    pub mdot_f: f64,
    /// Engine speed (rad/s).
    pub omega_e: f64,
    /// Intake manifold air mass (kg).
    pub m_a: f64,
}

impl PlantState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.t_exh, self.mdot_f, self.omega_e, self.m_a]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { t_exh: a[0], mdot_f: a[1], omega_e: a[2], m_a: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantInputs {
    /// Spark timing (deg ATDC).
    pub delta_spark: f64,
    /// Commanded fuel flow (kg/s).
    pub mdot_fc: f64,
    /// Air flow into the manifold (kg/s).
    pub mdot_ai: f64,
}

/// Drift error on one state equation. Additive values are in the units of
/// the corresponding engine quantity (K, kg/s, N m, kg/s).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Injection {
    #[default]
    None,
    Additive {
        alpha: f64,
    },
    Multiplicative {
        beta: f64,
    },
}

impl Injection {
    /// The true uncertain parameter, if any.
    pub fn truth(&self) -> Option<f64> {
        match *self {
            Injection::None => None,
            Injection::Additive { alpha } => Some(alpha),
            Injection::Multiplicative { beta } => Some(beta),
        }
    }

    fn alpha(&self) -> f64 {
        match *self {
            Injection::Additive { alpha } => alpha,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyInjection {
    pub t_exh: Injection,
    pub mdot_f: Injection,
    pub omega_e: Injection,
    pub m_a: Injection,
}

impl UncertaintyInjection {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, inj) in [("omega_e", self.omega_e), ("m_a", self.m_a)] {
            if matches!(inj, Injection::Multiplicative { .. }) {
                return Err(EngineError::Param(format!("multiplicative injection is only defined for t_exh and mdot_f, not {name}")));
            }
        }
        for inj in [self.t_exh, self.mdot_f, self.omega_e, self.m_a] {
            if inj.truth().is_some_and(|v| !v.is_finite()) {
                return Err(EngineError::Param("injected uncertainty must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [Injection; 4] {
        [self.t_exh, self.mdot_f, self.omega_e, self.m_a]
    }
}

pub fn volumetric_efficiency(m_a: f64, omega_e: f64, p: &EngineParams) -> f64 {
    let k = &p.vol_eff_coeffs;
    let c2 = (k[1] * omega_e + k[2]) * omega_e + k[3];
    let c1 = (k[4] * omega_e + k[5]) * omega_e + k[6];
    let c0 = (k[7] * omega_e + k[8]) * omega_e + k[9];
    (c2 * m_a + c1) * m_a + c0
}

/// Air flow out of the manifold into the cylinders (kg/s).
pub fn cylinder_air_flow(m_a: f64, omega_e: f64, p: &EngineParams) -> f64 {
    p.vol_eff_coeffs[0] * volumetric_efficiency(m_a, omega_e, p) * m_a * omega_e
}

pub fn torque_loss(omega_e: f64) -> f64 {
    0.4 * omega_e + 100.0
}

/// Air-fuel ratio of the cylinder charge.
pub fn air_fuel_ratio(state: &PlantState, p: &EngineParams) -> f64 {
    cylinder_air_flow(state.m_a, state.omega_e, p) / state.mdot_f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub state: PlantState,
    pub clamped_omega: bool,
    pub clamped_m_a: bool,
}

/// Advances all four states one Euler step.
pub fn step(
    state: &PlantState,
    inputs: &PlantInputs,
    inj: &UncertaintyInjection,
    p: &EngineParams,
    period: f64,
) -> Result<PlantStep, EngineError> {
    inj.validate()?;
    let dt = period;
    let afi = p.afi.at(air_fuel_ratio(state, p));
    let PlantState { t_exh, mdot_f, omega_e, m_a } = *state;
    let PlantInputs { delta_spark, mdot_fc, mdot_ai } = *inputs;

    let ke = dt / p.tau_e;
    let t_exh_next = match inj.t_exh {
        Injection::Multiplicative { beta } => t_exh + beta * ke * (600.0 * afi - t_exh) + ke * 7.5 * afi * delta_spark,
        other => {
            let nominal = (1.0 - ke) * t_exh + ke * (7.5 * delta_spark + 600.0) * afi;
            match other {
                Injection::Additive { alpha } => nominal + ke * alpha,
                _ => nominal,
            }
        }
    };

    let kf = dt / p.tau_f;
    let mdot_f_next = match inj.mdot_f {
        Injection::Multiplicative { beta } => mdot_f + kf * (mdot_fc - beta * mdot_f),
        Injection::Additive { alpha } => mdot_f + kf * (mdot_fc - mdot_f - alpha),
        Injection::None => mdot_f + kf * (mdot_fc - mdot_f),
    };

    let torque = p.torque_gain * m_a - torque_loss(omega_e) - inj.omega_e.alpha();
    let omega_raw = omega_e + dt / p.inertia_j * torque;

    let outflow = cylinder_air_flow(m_a, omega_e, p);
    let m_a_raw = m_a + (mdot_ai - outflow - inj.m_a.alpha()) * dt;

    let clamped_omega = omega_raw < 0.0;
    let clamped_m_a = m_a_raw < 0.0;
    if clamped_omega {
        log::debug!("engine speed clamped at zero (raw {omega_raw:e})");
    }
    if clamped_m_a {
        log::debug!("manifold air mass clamped at zero (raw {m_a_raw:e})");
    }
    let next = PlantState { t_exh: t_exh_next, mdot_f: mdot_f_next, omega_e: omega_raw.max(0.0), m_a: m_a_raw.max(0.0) };
    if !next.is_finite() {
        return Err(EngineError::NonFinite(format!("plant state {next:?}")));
    }
    Ok(PlantStep { state: next, clamped_omega, clamped_m_a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn zero_k() -> EngineParams {
        EngineParams { vol_eff_coeffs: [0.0; 10], ..EngineParams::default() }
    }

    fn naive_eta(m: f64, w: f64, k: &[f64; 10]) -> f64 {
        let mut sum = 0.0;
        sum += m * m * k[1] * w * w;
        sum += m * m * k[2] * w;
        sum += m * m * k[3];
        sum += m * k[4] * w * w;
        sum += m * k[5] * w;
        sum += m * k[6];
        sum += k[7] * w * w;
        sum += k[8] * w;
        sum += k[9];
        sum
    }

    #[test]
    fn vol_eff_examples() {
        assert_eq!(volumetric_efficiency(0.01, 100.0, &zero_k()), 0.0);
        let mut p = zero_k();
        p.vol_eff_coeffs[3] = 1.0;
        for (m, w) in [(0.01, 100.0), (0.3, 7.0), (2.0, 0.0)] {
            assert_relative_eq!(volumetric_efficiency(m, w, &p), m * m, max_relative = 1e-15);
        }
        let p = EngineParams::default();
        let want = naive_eta(0.01, 100.0, &p.vol_eff_coeffs);
        assert_relative_eq!(volumetric_efficiency(0.01, 100.0, &p), want, max_relative = 1e-12);
    }

    #[test]
    fn default_vol_eff_stays_in_envelope() {
        let p = EngineParams::default();
        for i in 0..=40 {
            for j in 0..=50 {
                let m = 0.002 + 0.008 * i as f64 / 40.0;
                let w = 50.0 + 250.0 * j as f64 / 50.0;
                let eta = volumetric_efficiency(m, w, &p);
                assert!((0.5..=0.95).contains(&eta), "eta({m}, {w}) = {eta}");
            }
        }
    }

    #[test]
    fn air_flow_examples() {
        let p = EngineParams::default();
        assert_eq!(cylinder_air_flow(0.005, 0.0, &p), 0.0);
        assert_eq!(cylinder_air_flow(0.0, 200.0, &p), 0.0);
        let mut p = zero_k();
        p.vol_eff_coeffs[0] = 1.0;
        p.vol_eff_coeffs[9] = 0.8;
        assert_relative_eq!(cylinder_air_flow(0.005, 200.0, &p), 0.8, max_relative = 1e-15);
    }

    #[test]
    fn torque_loss_examples() {
        assert_eq!(torque_loss(0.0), 100.0);
        assert_eq!(torque_loss(100.0), 140.0);
        assert_eq!(torque_loss(250.0), 200.0);
    }

    fn sample_state() -> PlantState {
        PlantState { t_exh: 400.0, mdot_f: 0.0008, omega_e: 120.0, m_a: 0.006 }
    }

    #[test]
    fn exhaust_row_example() {
        let inputs = PlantInputs { delta_spark: 20.0, mdot_fc: 0.0008, mdot_ai: 0.0 };
        let next = step(&sample_state(), &inputs, &UncertaintyInjection::default(), &EngineParams::default(), 0.02).unwrap().state;
        // recomputed by hand: 0.96 * 400 + 0.04 * (7.5 * 20 + 600) * 1
        let by_hand = 0.96 * 400.0 + 0.04 * 750.0;
        assert_relative_eq!(next.t_exh, by_hand, max_relative = 1e-15);
        assert_relative_eq!(next.t_exh, 414.0, max_relative = 1e-15);
    }

    #[test]
    fn fixed_points() {
        let p = EngineParams::default();
        let s = sample_state();
        // fuel row
        let inputs = PlantInputs { delta_spark: 0.0, mdot_fc: s.mdot_f, mdot_ai: 0.0 };
        let next = step(&s, &inputs, &UncertaintyInjection::default(), &p, 0.02).unwrap().state;
        assert_eq!(next.mdot_f, s.mdot_f);
        // exhaust row: 7.5 delta + 600 = t_exh / afi
        let inputs = PlantInputs { delta_spark: (s.t_exh - 600.0) / 7.5, ..inputs };
        let next = step(&s, &inputs, &UncertaintyInjection::default(), &p, 0.02).unwrap().state;
        assert_relative_eq!(next.t_exh, s.t_exh, max_relative = 1e-15);
    }

    #[test]
    fn nominal_step_is_the_plain_recursion() {
        let p = EngineParams::default();
        let s = PlantState { t_exh: 790.0, mdot_f: 0.0006, omega_e: 130.0, m_a: 0.0058 };
        let u = PlantInputs { delta_spark: 12.5, mdot_fc: 0.0007, mdot_ai: 0.0095 };
        let t = 0.02;
        let next = step(&s, &u, &UncertaintyInjection::default(), &p, t).unwrap().state;
        let k = &p.vol_eff_coeffs;
        let eta = s.m_a * s.m_a * (k[1] * s.omega_e * s.omega_e + k[2] * s.omega_e + k[3])
            + s.m_a * (k[4] * s.omega_e * s.omega_e + k[5] * s.omega_e + k[6])
            + k[7] * s.omega_e * s.omega_e
            + k[8] * s.omega_e
            + k[9];
        let mao = k[0] * eta * s.m_a * s.omega_e;
        assert_eq!(next.t_exh, (1.0 - t / 0.5) * s.t_exh + t / 0.5 * (7.5 * u.delta_spark + 600.0) * 1.0);
        assert_eq!(next.mdot_f, s.mdot_f + t / 0.06 * (u.mdot_fc - s.mdot_f));
        assert_eq!(next.omega_e, s.omega_e + t / 0.2 * (30000.0 * s.m_a - (0.4 * s.omega_e + 100.0) - 0.0));
        assert_relative_eq!(next.m_a, s.m_a + (u.mdot_ai - mao - 0.0) * t, max_relative = 1e-14);
    }

    #[test]
    fn manifold_drains_without_inflow() {
        // speed held fixed so only the mass balance acts
        let p = EngineParams::default();
        let mut s = PlantState { t_exh: 800.0, mdot_f: 0.0006, omega_e: 150.0, m_a: 0.006 };
        let u = PlantInputs { delta_spark: 0.0, mdot_fc: 0.0006, mdot_ai: 0.0 };
        for _ in 0..2000 {
            let out = step(&s, &u, &UncertaintyInjection::default(), &p, 0.02).unwrap();
            if out.clamped_m_a {
                assert_eq!(out.state.m_a, 0.0);
                break;
            }
            assert!(out.state.m_a < s.m_a);
            s = PlantState { omega_e: 150.0, ..out.state };
        }
        // an extra outflow error drains it to the floor
        let inj = UncertaintyInjection { m_a: Injection::Additive { alpha: 0.01 }, ..Default::default() };
        let out = step(&PlantState { m_a: 1e-5, ..s }, &u, &inj, &p, 0.02).unwrap();
        assert!(out.clamped_m_a);
        assert_eq!(out.state.m_a, 0.0);
    }

    #[test]
    fn speed_clamps_at_zero() {
        let p = EngineParams::default();
        let s = PlantState { t_exh: 800.0, mdot_f: 0.0006, omega_e: 0.5, m_a: 0.0 };
        let out = step(&s, &PlantInputs::default(), &UncertaintyInjection::default(), &p, 0.02).unwrap();
        assert!(out.clamped_omega);
        assert_eq!(out.state.omega_e, 0.0);
    }

    #[test]
    fn multiplicative_speed_injection_is_rejected() {
        let inj = UncertaintyInjection { omega_e: Injection::Multiplicative { beta: 1.1 }, ..Default::default() };
        let r = step(&sample_state(), &PlantInputs::default(), &inj, &EngineParams::default(), 0.02);
        assert!(matches!(r, Err(EngineError::Param(_))));
    }

    #[test]
    fn afi_table_interpolates_and_holds() {
        let afi = Afi::Table { afr: vec![12.0, 14.0, 16.0], value: vec![0.9, 1.0, 1.2] };
        afi.validate().unwrap();
        assert_eq!(afi.at(10.0), 0.9);
        assert_relative_eq!(afi.at(15.0), 1.1, max_relative = 1e-15);
        assert_eq!(afi.at(20.0), 1.2);
        assert!(Afi::Constant(0.0).validate().is_err());
        assert!(Afi::Table { afr: vec![1.0, 1.0], value: vec![1.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn period_warning_threshold() {
        let p = EngineParams::default();
        assert!(p.period_warning(0.02).is_none());
        assert!(p.period_warning(0.06).is_some());
    }

    proptest! {
        #[test]
        fn exhaust_row_is_affine_in_spark(d1 in -10.0f64..40.0, d2 in -10.0f64..40.0, t_exh in 300.0f64..1000.0) {
            let p = EngineParams::default();
            let s = PlantState { t_exh, ..sample_state() };
            let at = |d: f64| {
                let u = PlantInputs { delta_spark: d, mdot_fc: 0.0007, mdot_ai: 0.01 };
                step(&s, &u, &UncertaintyInjection::default(), &p, 0.02).unwrap().state.t_exh
            };
            let slope = 0.02 / 0.5 * 7.5 * 1.0;
            prop_assert!((at(d1) - at(d2) - slope * (d1 - d2)).abs() <= 1e-12 * 1000.0);
        }

        #[test]
        fn exhaust_injections_agree_pointwise(beta in 0.5f64..2.0, t_exh in 300.0f64..1000.0, d in -10.0f64..40.0) {
            let p = EngineParams::default();
            let s = PlantState { t_exh, ..sample_state() };
            let u = PlantInputs { delta_spark: d, mdot_fc: 0.0007, mdot_ai: 0.01 };
            let alpha = (beta - 1.0) * (600.0 * 1.0 - t_exh);
            let add = UncertaintyInjection { t_exh: Injection::Additive { alpha }, ..Default::default() };
            let mul = UncertaintyInjection { t_exh: Injection::Multiplicative { beta }, ..Default::default() };
            let a = step(&s, &u, &add, &p, 0.02).unwrap().state;
            let b = step(&s, &u, &mul, &p, 0.02).unwrap().state;
            prop_assert!((a.t_exh - b.t_exh).abs() <= 1e-12 * a.t_exh.abs());
            prop_assert_eq!(a.omega_e, b.omega_e);
        }

        #[test]
        fn step_is_deterministic(t_exh in 300.0f64..1000.0, w in 0.0f64..400.0, m in 0.0f64..0.02, d in -10.0f64..40.0) {
            let p = EngineParams::default();
            let s = PlantState { t_exh, mdot_f: 0.0007, omega_e: w, m_a: m };
            let u = PlantInputs { delta_spark: d, mdot_fc: 0.0007, mdot_ai: 0.01 };
            let inj = UncertaintyInjection { omega_e: Injection::Additive { alpha: 20.0 }, ..Default::default() };
            prop_assert_eq!(step(&s, &u, &inj, &p, 0.02).unwrap(), step(&s, &u, &inj, &p, 0.02).unwrap());
        }
    }
}
