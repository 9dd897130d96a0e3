use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate used by every optimizer unless configured otherwise.
pub const DEFAULT_LR: f64 = 3e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub label: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(label: &str, num_params: usize, lr: f64) -> Self {
        Self {
            label: label.to_owned(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam `{}`: params {} / grads {} / state {}",
                self.label,
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(self.label.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_everything_at_rest() {
        let mut adam = AdamState::new("w", 3, 1e-2);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert!(adam.first_moment().iter().all(|m| *m == 0.0));
        assert!(adam.second_moment().iter().all(|v| *v == 0.0));
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let lr = 3e-4;
        let mut adam = AdamState::new("w", 2, lr);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[2.5, -0.01]).unwrap();
        assert!((p[0] + lr * 2.5 / (2.5 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - lr * 0.01 / (0.01 + 1e-8)).abs() < 1e-15);
        assert!((p[0] + lr).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut adam = AdamState::new("w", 1, 1e-3);
        let mut p = vec![0.0];
        let mut prev = p[0];
        for _ in 0..5 {
            adam.step(&mut p, &[0.7]).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
    }

    #[test]
    fn non_finite_gradient_names_the_array() {
        let mut adam = AdamState::new("critic-1", 2, 1e-3);
        let mut p = vec![0.0, 0.0];
        let err = adam.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref l) if l == "critic-1"));
        assert_eq!(adam.steps(), 0);
    }
}
