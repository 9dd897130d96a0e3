use super::DT;
use crate::math::RngStream;

pub(super) const TASKS: [&str; 3] = ["east", "west", "north"];

/// Planar point mass, state `(x, y, vx, vy)`, action = acceleration command.
///
/// Left of `chaos_x` the dynamics are an exact double integrator with a speed
/// cap: `p' = p + dt v`, `v' = clip(v + dt g a, -v_max, v_max)`. At or right
/// of `chaos_x` each capped velocity component is additionally passed through
/// a tent map with `folds` teeth over `[-v_max, v_max]`, whose slope `2 folds`
/// makes nearby velocities separate quickly.
#[derive(Debug, Clone)]
pub struct TwoZonePointMass {
    pub gain: f64,
    pub v_max: f64,
    pub chaos_x: f64,
    pub folds: u32,
    pub init_half_width: f64,
}

impl Default for TwoZonePointMass {
    fn default() -> Self {
        Self { gain: 4.0, v_max: 1.0, chaos_x: 0.0, folds: 4, init_half_width: 0.1 }
    }
}

/// Tent map on `[0, 1]` with `folds` teeth.
pub(crate) fn tent(u: f64, folds: u32) -> f64 {
    let w = (folds as f64 * u).rem_euclid(1.0);
    1.0 - (2.0 * w - 1.0).abs()
}

impl TwoZonePointMass {
    pub fn left_only() -> Self {
        Self { chaos_x: f64::INFINITY, ..Self::default() }
    }

    pub fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        let w = self.init_half_width;
        vec![rng.uniform_range(-w, w), rng.uniform_range(-w, w), 0.0, 0.0]
    }

    pub fn in_chaos(&self, s: &[f64]) -> bool {
        s[0] >= self.chaos_x
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let chaotic = self.in_chaos(s);
        let mut out = vec![0.0; 4];
        for k in 0..2 {
            out[k] = s[k] + DT * s[k + 2];
            let mut v = (s[k + 2] + DT * self.gain * a[k]).clamp(-self.v_max, self.v_max);
            if chaotic {
                let u = 0.5 * (v / self.v_max + 1.0);
                v = self.v_max * (2.0 * tent(u, self.folds) - 1.0);
            }
            out[k + 2] = v;
        }
        out
    }
}

pub(super) fn reward(task: &str, s_next: &[f64]) -> f64 {
    match task {
        "east" => s_next[2],
        "west" => -s_next[2],
        "north" => s_next[3],
        _ => unreachable!("task checked by caller"),
    }
}
