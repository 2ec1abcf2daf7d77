//! Piecewise desired trajectories sampled on the control grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Constant,
    #[serde(alias = "step-sequence", alias = "step_sequence")]
    Step,
    #[serde(alias = "ramp-sequence", alias = "ramp_sequence")]
    Ramp,
}

/// Breakpoints are `[time_s, value]`. Step sequences hold each value until
/// the next breakpoint; ramp sequences interpolate linearly. Both hold the
/// final value afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub points: Vec<[f64; 2]>,
    /// Half-width of uniform per-step noise added to the samples.
    #[serde(default)]
    pub dither: f64,
}

fn time_tol(t: f64) -> f64 {
    1e-9 * t.abs().max(1.0)
}

impl TrajectorySpec {
    pub fn constant(value: f64) -> Self {
        Self { kind: TrajectoryKind::Constant, points: vec![[0.0, value]], dither: 0.0 }
    }

    pub fn step(points: Vec<[f64; 2]>) -> Self {
        Self { kind: TrajectoryKind::Step, points, dither: 0.0 }
    }

    pub fn ramp(points: Vec<[f64; 2]>) -> Self {
        Self { kind: TrajectoryKind::Ramp, points, dither: 0.0 }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let Some(first) = self.points.first() else {
            return bad("trajectory needs at least one breakpoint".into());
        };
        if first[0] != 0.0 {
            return bad(format!("first breakpoint must be at t = 0, got {}", first[0]));
        }
        if self.kind == TrajectoryKind::Constant && self.points.len() != 1 {
            return bad("constant trajectory takes exactly one breakpoint".into());
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return bad("trajectory breakpoints must be finite".into());
        }
        if self.points.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return bad("breakpoint times must be strictly increasing".into());
        }
        if !(self.dither.is_finite() && self.dither >= 0.0) {
            return bad(format!("dither must be non-negative, got {}", self.dither));
        }
        Ok(())
    }

    /// Noise-free value at time `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        let tol = time_tol(t);
        // index of the last breakpoint at or before t
        let k = pts.partition_point(|p| p[0] <= t + tol).saturating_sub(1);
        match self.kind {
            TrajectoryKind::Constant | TrajectoryKind::Step => pts[k][1],
            TrajectoryKind::Ramp => {
                if k + 1 >= pts.len() || (t - pts[k][0]).abs() <= tol {
                    return pts[k][1];
                }
                let ([t0, v0], [t1, v1]) = (pts[k], pts[k + 1]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)
    }
}

/// Desired samples `(x_d(t), x_d(t + period))`.
pub fn trajectory_value(spec: &TrajectorySpec, t: f64, period: f64) -> (f64, f64) {
    (spec.value_at(t), spec.value_at(t + period))
}

/// Grid sampler with the per-step dither drawn up front.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    spec: TrajectorySpec,
    period: f64,
    offsets: Vec<f64>,
}

impl TrajectorySampler {
    /// `stream` separates the noise of several trajectories sharing a seed.
    pub fn new(spec: TrajectorySpec, period: f64, steps: usize, seed: u64, stream: u64) -> Self {
        let offsets = if spec.dither > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            (0..=steps).map(|_| rng.gen_range(-spec.dither..=spec.dither)).collect()
        } else {
            Vec::new()
        };
        Self { spec, period, offsets }
    }

    fn at(&self, i: usize) -> f64 {
        let v = self.spec.value_at(i as f64 * self.period);
        match self.offsets.get(i) {
            Some(o) => v + o,
            None => v,
        }
    }

    /// `(x_d(i), x_d(i + 1))`, with times taken as index times period.
    pub fn at_step(&self, i: usize) -> (f64, f64) {
        (self.at(i), self.at(i + 1))
    }
}
