use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::normalizer::Normalizer;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::math::stats::{unit_gaussian_logpdf_unchecked, LN_2PI};
use crate::math::{AdamState, Mlp, RngStream};

/// What the model is conditioned on besides the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioner {
    /// Latent action `z`.
    Latent,
    /// Raw environment action `a`.
    Action,
}

impl Conditioner {
    pub fn of<'a>(&self, t: &'a Transition) -> &'a [f64] {
        match self {
            Conditioner::Latent => t.z.as_deref().expect("latent model fed a transition without z"),
            Conditioner::Action => &t.a,
        }
    }
}

/// Arrays for one fitting batch.
#[derive(Debug, Clone)]
pub struct FitBatch {
    pub states: Array2<f64>,
    pub conds: Array2<f64>,
    pub next_states: Array2<f64>,
}

impl FitBatch {
    pub fn gather(data: &[Transition], idx: &[usize], cond: Conditioner) -> Self {
        let sd = data[0].s.len();
        let cd = cond.of(&data[0]).len();
        let mut states = Array2::zeros((idx.len(), sd));
        let mut conds = Array2::zeros((idx.len(), cd));
        let mut next_states = Array2::zeros((idx.len(), sd));
        for (row, &i) in idx.iter().enumerate() {
            let t = &data[i];
            states.row_mut(row).iter_mut().zip(&t.s).for_each(|(d, v)| *d = *v);
            conds.row_mut(row).iter_mut().zip(cond.of(t)).for_each(|(d, v)| *d = *v);
            next_states.row_mut(row).iter_mut().zip(&t.s_next).for_each(|(d, v)| *d = *v);
        }
        Self { states, conds, next_states }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `s' ~ N(s + delta(s, c), I)` in normalized-delta space, where `delta` is an
/// MLP over the normalized state concatenated with the conditioner.
#[derive(Debug, Clone)]
pub struct GaussianDynamicsModel {
    conditioner: Conditioner,
    state_dim: usize,
    cond_dim: usize,
    net: Mlp,
    adam: AdamState,
    state_norm: Normalizer,
    delta_norm: Normalizer,
}

impl GaussianDynamicsModel {
    pub fn new(
        state_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        conditioner: Conditioner,
        lr: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut sizes = vec![state_dim + cond_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        let net = Mlp::new(&sizes, rng);
        Self::from_parts(conditioner, state_dim, cond_dim, net, lr)
    }

    pub fn from_parts(conditioner: Conditioner, state_dim: usize, cond_dim: usize, net: Mlp, lr: f64) -> Self {
        let adam = AdamState::new("dynamics", net.num_params(), lr);
        Self {
            conditioner,
            state_dim,
            cond_dim,
            net,
            adam,
            state_norm: Normalizer::new(state_dim),
            delta_norm: Normalizer::new(state_dim),
        }
    }

    pub fn conditioner(&self) -> Conditioner {
        self.conditioner
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn adam_mut(&mut self) -> &mut AdamState {
        &mut self.adam
    }

    pub fn normalizers(&self) -> (&Normalizer, &Normalizer) {
        (&self.state_norm, &self.delta_norm)
    }

    pub fn set_normalizers(&mut self, state: Normalizer, delta: Normalizer) {
        self.state_norm = state;
        self.delta_norm = delta;
    }

    /// Folds the given transitions into the running statistics.
    pub fn update_normalizers(&mut self, data: &[Transition]) {
        for t in data {
            self.state_norm.update(&t.s);
            let delta: Vec<f64> = t.s_next.iter().zip(&t.s).map(|(n, s)| n - s).collect();
            self.delta_norm.update(&delta);
        }
    }

    fn net_input(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Array2<f64> {
        let b = states.nrows();
        let mut x = Array2::zeros((b, self.state_dim + self.cond_dim));
        let std = self.state_norm.std();
        let mean = self.state_norm.mean();
        for i in 0..b {
            for j in 0..self.state_dim {
                x[[i, j]] = (states[[i, j]] - mean[j]) / std[j];
            }
            for j in 0..self.cond_dim {
                x[[i, self.state_dim + j]] = conds[[i, j]];
            }
        }
        x
    }

    pub(crate) fn check_shapes(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Result<()> {
        if states.ncols() != self.state_dim || conds.ncols() != self.cond_dim || states.nrows() != conds.nrows() {
            return Err(Error::contract(format!(
                "model expects ({} state, {} cond) columns; got {:?} and {:?}",
                self.state_dim,
                self.cond_dim,
                states.shape(),
                conds.shape()
            )));
        }
        if states.iter().chain(conds.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite model input"));
        }
        Ok(())
    }

    /// Mean of the normalized state delta, one row per input.
    pub fn predict_normalized(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward_batch(self.net_input(states, conds).view())
    }

    /// Mean prediction from normalized-delta outputs: `s + denorm(delta)`.
    pub fn denormalize_next(&self, states: ArrayView2<f64>, normalized: &Array2<f64>) -> Array2<f64> {
        let std = self.delta_norm.std();
        let mean = self.delta_norm.mean();
        let mut out = states.to_owned();
        for ((i, j), v) in out.indexed_iter_mut() {
            *v += normalized[[i, j]] * std[j] + mean[j];
        }
        out
    }

    pub fn predict_mean_batch(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_shapes(states, conds)?;
        let norm = self.predict_normalized(states, conds);
        Ok(self.denormalize_next(states, &norm))
    }

    /// Predicted next state for a single `(s, c)`.
    pub fn predict_mean(&self, s: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let states = ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::contract(e.to_string()))?;
        let conds = ArrayView2::from_shape((1, c.len()), c).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict_mean_batch(states, conds)?.row(0).to_vec())
    }

    pub fn normalized_delta(&self, s: &[f64], s_next: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = s_next.iter().zip(s).map(|(n, x)| n - x).collect();
        self.delta_norm.apply(&delta)
    }

    pub fn normalized_delta_batch(&self, states: ArrayView2<f64>, next: ArrayView2<f64>) -> Array2<f64> {
        let std = self.delta_norm.std();
        let mean = self.delta_norm.mean();
        let mut out = &next - &states;
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = (*v - mean[j]) / std[j];
        }
        out
    }

    /// `log p(s' | s, c)` under the unit-covariance Gaussian in normalized
    /// delta space.
    pub fn log_prob(&self, s: &[f64], c: &[f64], s_next: &[f64]) -> Result<f64> {
        if s.len() != self.state_dim || s_next.len() != self.state_dim || c.len() != self.cond_dim {
            return Err(Error::contract("log_prob dimension mismatch"));
        }
        let states = ArrayView2::from_shape((1, s.len()), s).unwrap();
        let conds = ArrayView2::from_shape((1, c.len()), c).unwrap();
        let pred = self.predict_normalized(states, conds);
        let target = self.normalized_delta(s, s_next);
        Ok(unit_gaussian_logpdf_unchecked(pred.row(0).as_slice().unwrap(), &target))
    }

    /// Mean negative log-likelihood of a batch without updating anything.
    pub fn nll(&self, batch: &FitBatch) -> f64 {
        let pred = self.predict_normalized(batch.states.view(), batch.conds.view());
        let target = self.normalized_delta_batch(batch.states.view(), batch.next_states.view());
        let d = self.state_dim as f64;
        let sq = (&pred - &target).mapv(|v| v * v).sum();
        0.5 * sq / batch.len() as f64 + 0.5 * d * LN_2PI
    }

    /// One maximum-likelihood Adam step on exactly this batch. Returns the
    /// mean NLL before the step.
    pub fn fit_batch(&mut self, batch: &FitBatch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("dynamics fit"));
        }
        self.check_shapes(batch.states.view(), batch.conds.view())?;
        let input = self.net_input(batch.states.view(), batch.conds.view());
        let (pred, cache) = self.net.forward_cached(input.view())?;
        let target = self.normalized_delta_batch(batch.states.view(), batch.next_states.view());
        let n = batch.len() as f64;
        let resid = &pred - &target;
        let loss = 0.5 * resid.mapv(|v| v * v).sum() / n + 0.5 * self.state_dim as f64 * LN_2PI;
        let grad_out = resid / n;
        let grad = self.net.gradient(&cache, grad_out.view())?;
        self.adam.step(self.net.params_mut(), &grad.params)?;
        Ok(loss)
    }
}

/// Per-row trace of the population variance of member predictions, written
/// as `sum_{i,j} (p_i - p_j)^2 / (2 E^2)` so identical members give exactly 0.
pub(crate) fn variance_trace(preds: &[Array2<f64>]) -> Vec<f64> {
    let e = preds.len() as f64;
    let b = preds[0].nrows();
    let mut out = vec![0.0; b];
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            let diff = &preds[i] - &preds[j];
            for (r, row) in diff.axis_iter(Axis(0)).enumerate() {
                out[r] += row.iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= e * e);
    out
}

/// Per-row maximum pairwise squared distance between member predictions.
pub(crate) fn max_pairwise_sq(preds: &[Array2<f64>]) -> Vec<f64> {
    let b = preds[0].nrows();
    let mut out = vec![0.0f64; b];
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            let diff = &preds[i] - &preds[j];
            for (r, row) in diff.axis_iter(Axis(0)).enumerate() {
                out[r] = out[r].max(row.iter().map(|v| v * v).sum());
            }
        }
    }
    out
}

pub(crate) fn mean_of(preds: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = preds[0].clone();
    for p in &preds[1..] {
        acc += p;
    }
    acc / preds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model() -> GaussianDynamicsModel {
        let net = Mlp::zeros(&[3, 8, 2]);
        GaussianDynamicsModel::from_parts(Conditioner::Action, 2, 1, net, 1e-3)
    }

    #[test]
    fn zero_network_predicts_identity() {
        let m = zero_model();
        assert_eq!(m.predict_mean(&[0.3, -2.0], &[0.5]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let m = zero_model();
        assert!(matches!(m.predict_mean(&[f64::NAN, 0.0], &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn log_prob_closed_forms() {
        let m = zero_model();
        let base = -LN_2PI; // d = 2
        assert!((m.log_prob(&[1.0, 1.0], &[0.0], &[1.0, 1.0]).unwrap() - base).abs() < 1e-12);
        assert!((m.log_prob(&[1.0, 1.0], &[0.0], &[1.0, 2.0]).unwrap() - (base - 0.5)).abs() < 1e-12);
        // shifting prediction and target together changes nothing
        assert!((m.log_prob(&[5.0, -3.0], &[0.0], &[5.0, -2.0]).unwrap() - (base - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn delta_space_identity() {
        let mut rng = RngStream::new(9, "m");
        let mut m = GaussianDynamicsModel::new(2, 1, &[8], Conditioner::Action, 1e-3, &mut rng);
        let data: Vec<Transition> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.1;
                Transition {
                    s: vec![x, -x],
                    z: None,
                    a: vec![0.5],
                    r: 0.0,
                    s_next: vec![x + 0.3, -x * 2.0],
                    done: false,
                    mode: crate::envs::ActionMode::Deterministic,
                }
            })
            .collect();
        m.update_normalizers(&data);
        let states = array![[0.4, 1.0]];
        let conds = array![[0.2]];
        let next = m.predict_mean_batch(states.view(), conds.view()).unwrap();
        let raw = m.predict_normalized(states.view(), conds.view());
        let (_, dn) = m.normalizers();
        let expected = dn.invert(raw.row(0).as_slice().unwrap());
        for j in 0..2 {
            assert!(((next[[0, j]] - states[[0, j]]) - expected[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut rng = RngStream::new(1, "m");
        let mut m = GaussianDynamicsModel::new(2, 1, &[8], Conditioner::Action, 0.0, &mut rng);
        let batch = FitBatch {
            states: array![[0.1, 0.2], [0.3, 0.1]],
            conds: array![[1.0], [-1.0]],
            next_states: array![[0.2, 0.2], [0.0, 0.4]],
        };
        let before = m.net().params().to_vec();
        let l1 = m.fit_batch(&batch).unwrap();
        let l2 = m.fit_batch(&batch).unwrap();
        assert_eq!(before, m.net().params());
        assert_eq!(l1, l2);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut m = zero_model();
        let batch = FitBatch {
            states: Array2::zeros((0, 2)),
            conds: Array2::zeros((0, 1)),
            next_states: Array2::zeros((0, 2)),
        };
        assert!(matches!(m.fit_batch(&batch), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn identical_transitions_drive_loss_to_the_constant() {
        let mut rng = RngStream::new(2, "m");
        let mut m = GaussianDynamicsModel::new(2, 1, &[16, 16], Conditioner::Action, 1e-2, &mut rng);
        let batch = FitBatch {
            states: array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
            conds: array![[0.2], [0.2], [0.2]],
            next_states: array![[0.7, 0.1], [0.7, 0.1], [0.7, 0.1]],
        };
        let mut loss = 0.0;
        for _ in 0..2000 {
            loss = m.fit_batch(&batch).unwrap();
        }
        let floor = LN_2PI; // d/2 * ln(2 pi) with d = 2
        assert!(loss >= floor - 1e-12);
        assert!(loss - floor < 1e-6, "loss {loss}");
    }

    #[test]
    fn pairwise_helpers_by_hand() {
        let preds = vec![array![[0.0, 0.0]], array![[2.0, 0.0]]];
        assert_eq!(variance_trace(&preds), vec![1.0]);
        assert_eq!(max_pairwise_sq(&preds), vec![4.0]);
        assert_eq!(mean_of(&preds), array![[1.0, 0.0]]);
    }
}
