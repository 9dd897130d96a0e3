use super::DT;
use crate::math::RngStream;

pub(super) const TASKS: [&str; 2] = ["stay", "forward"];

/// Inverted pole on a cart, state `(x, theta, x_dot, theta_dot)`.
///
/// The action sets the cart acceleration `x_dd = force * a`; the pole obeys
/// `theta_dd = (g / l) sin(theta) - (x_dd / l) cos(theta)`. Integration is
/// semi-implicit Euler.
#[derive(Debug, Clone)]
pub struct CartPendulum {
    pub force: f64,
    pub gravity: f64,
    pub length: f64,
    pub max_angle: f64,
}

impl Default for CartPendulum {
    fn default() -> Self {
        Self { force: 10.0, gravity: 9.8, length: 1.0, max_angle: 0.4 }
    }
}

impl CartPendulum {
    pub fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![0.0, rng.uniform_range(-0.05, 0.05), 0.0, 0.0]
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (x, th, xd, thd) = (s[0], s[1], s[2], s[3]);
        let x_acc = self.force * a[0];
        let th_acc = (self.gravity / self.length) * th.sin() - (x_acc / self.length) * th.cos();
        let xd2 = xd + DT * x_acc;
        let thd2 = thd + DT * th_acc;
        vec![x + DT * xd2, th + DT * thd2, xd2, thd2]
    }

    pub fn fallen(&self, s: &[f64]) -> bool {
        s[1].abs() > self.max_angle
    }
}

/// Base reward without the survival bonus.
pub(super) fn reward(task: &str, s_next: &[f64]) -> f64 {
    match task {
        "stay" => -s_next[0] * s_next[0],
        "forward" => s_next[2],
        _ => unreachable!("task checked by caller"),
    }
}
