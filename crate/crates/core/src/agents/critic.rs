use ndarray::{s, Array2, ArrayView2};

use crate::error::Result;
use crate::math::mlp::hcat;
use crate::math::{AdamState, Mlp, RngStream};

/// Twin Q-networks over `(input, action)` with Polyak-averaged targets.
#[derive(Debug, Clone)]
pub struct CriticPair {
    online: [Mlp; 2],
    target: [Mlp; 2],
    adams: [AdamState; 2],
    action_dim: usize,
}

impl CriticPair {
    pub fn new(input_dim: usize, action_dim: usize, hidden: &[usize], lr: f64, rng: &mut RngStream) -> Self {
        let mut sizes = vec![input_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, rng);
        let q2 = Mlp::new(&sizes, rng);
        Self::from_nets([q1, q2], action_dim, lr)
    }

    pub fn from_nets(online: [Mlp; 2], action_dim: usize, lr: f64) -> Self {
        let target = [online[0].clone(), online[1].clone()];
        let adams = [
            AdamState::new("critic-1", online[0].num_params(), lr),
            AdamState::new("critic-2", online[1].num_params(), lr),
        ];
        Self { online, target, adams, action_dim }
    }

    pub fn online(&self) -> &[Mlp; 2] {
        &self.online
    }

    pub fn target(&self) -> &[Mlp; 2] {
        &self.target
    }

    #[cfg(test)]
    pub(crate) fn online_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.online
    }

    #[cfg(test)]
    pub(crate) fn target_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.target
    }

    pub fn set_lr(&mut self, lr: f64) {
        for a in &mut self.adams {
            a.lr = lr;
        }
    }

    fn joint(inputs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        hcat(&[inputs.reborrow(), actions.reborrow()])
    }

    /// `min(Q1, Q2)` per row on the online networks.
    pub fn min_q(&self, inputs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Vec<f64> {
        let x = Self::joint(inputs, actions);
        let a = self.online[0].forward_batch(x.view());
        let b = self.online[1].forward_batch(x.view());
        a.iter().zip(b.iter()).map(|(p, q)| p.min(*q)).collect()
    }

    /// `min(Q1', Q2')` per row on the target networks.
    pub fn target_min_q(&self, inputs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Vec<f64> {
        let x = Self::joint(inputs, actions);
        let a = self.target[0].forward_batch(x.view());
        let b = self.target[1].forward_batch(x.view());
        a.iter().zip(b.iter()).map(|(p, q)| p.min(*q)).collect()
    }

    /// One regression step of both critics toward `targets`; returns the
    /// mean of the two pre-step losses `0.5 * mean (Q - y)^2`.
    pub fn regress(&mut self, inputs: ArrayView2<f64>, actions: ArrayView2<f64>, targets: &[f64]) -> Result<f64> {
        let x = Self::joint(inputs, actions);
        let n = targets.len() as f64;
        let mut total = 0.0;
        for k in 0..2 {
            let (q, cache) = self.online[k].forward_cached(x.view())?;
            let mut g = Array2::zeros((targets.len(), 1));
            for (i, y) in targets.iter().enumerate() {
                let r = q[[i, 0]] - y;
                total += 0.5 * r * r / n;
                g[[i, 0]] = r / n;
            }
            let grad = self.online[k].gradient(&cache, g.view())?;
            self.adams[k].step(self.online[k].params_mut(), &grad.params)?;
        }
        Ok(total / 2.0)
    }

    /// `min(Q1, Q2)` and its gradient with respect to the action, taking
    /// the gradient of whichever critic is smaller on each row.
    pub fn min_q_with_action_grad(
        &self,
        inputs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let x = Self::joint(inputs, actions);
        let (q1, c1) = self.online[0].forward_cached(x.view())?;
        let (q2, c2) = self.online[1].forward_cached(x.view())?;
        let b = x.nrows();
        let mut sel1 = Array2::zeros((b, 1));
        let mut sel2 = Array2::zeros((b, 1));
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            if q1[[i, 0]] <= q2[[i, 0]] {
                sel1[[i, 0]] = 1.0;
                out.push(q1[[i, 0]]);
            } else {
                sel2[[i, 0]] = 1.0;
                out.push(q2[[i, 0]]);
            }
        }
        let g1 = self.online[0].gradient(&c1, sel1.view())?.input;
        let g2 = self.online[1].gradient(&c2, sel2.view())?.input;
        let start = x.ncols() - self.action_dim;
        let grad = &g1.slice(s![.., start..]) + &g2.slice(s![.., start..]);
        Ok((out, grad))
    }

    /// `target <- tau * target + (1 - tau) * online`.
    pub fn polyak(&mut self, tau: f64) {
        for k in 0..2 {
            self.target[k].polyak_from(&self.online[k], tau);
        }
    }
}
