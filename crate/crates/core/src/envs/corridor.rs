use crate::math::RngStream;

pub(super) const TASKS: [&str; 2] = ["reach", "center"];

/// One-dimensional corridor `x in [-1, 1]` with `x' = clip(x + step a)`.
/// Every state at or left of `trap_x` is absorbing.
#[derive(Debug, Clone)]
pub struct TrapCorridor {
    pub step: f64,
    pub trap_x: f64,
    pub goal_x: f64,
}

impl Default for TrapCorridor {
    fn default() -> Self {
        Self { step: 0.1, trap_x: -0.6, goal_x: 0.7 }
    }
}

impl TrapCorridor {
    pub fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![rng.uniform_range(-0.1, 0.1)]
    }

    pub fn trapped(&self, s: &[f64]) -> bool {
        s[0] <= self.trap_x
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        if self.trapped(s) {
            return s.to_vec();
        }
        vec![(s[0] + self.step * a[0]).clamp(-1.0, 1.0)]
    }

    pub(super) fn reward(&self, task: &str, s_next: &[f64]) -> f64 {
        match task {
            "reach" => -(s_next[0] - self.goal_x).abs(),
            "center" => -s_next[0].abs(),
            _ => unreachable!("task checked by caller"),
        }
    }
}
