use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::model::{max_pairwise_sq, mean_of, variance_trace, Conditioner, FitBatch, GaussianDynamicsModel};
use super::normalizer::Normalizer;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::math::RngStream;

/// Default number of ensemble members.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

/// Member predictions for one batch of `(s, c)` pairs.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    /// Normalized-delta means, one array per member.
    pub members: Vec<Array2<f64>>,
    /// Ensemble-mean next state in raw units.
    pub mean_next: Array2<f64>,
}

impl EnsemblePrediction {
    /// Per-row `Tr Var_i[mu_i]` (population variance).
    pub fn disagreement(&self) -> Vec<f64> {
        variance_trace(&self.members)
    }

    /// Per-row `-lambda * max_{i,j} ||mu_i - mu_j||^2`.
    pub fn penalty(&self, lambda: f64) -> Vec<f64> {
        if lambda == 0.0 {
            return vec![0.0; self.mean_next.nrows()];
        }
        max_pairwise_sq(&self.members).into_iter().map(|d| -lambda * d).collect()
    }
}

/// `E` Gaussian mean networks differing only in initialization and
/// minibatch order. Normalizer statistics are identical across members.
#[derive(Debug, Clone)]
pub struct EnsembleDynamics {
    members: Vec<GaussianDynamicsModel>,
    batch_rngs: Vec<RngStream>,
}

impl EnsembleDynamics {
    pub fn new(
        size: usize,
        state_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        conditioner: Conditioner,
        lr: f64,
        rng: &RngStream,
    ) -> Self {
        let members = (0..size)
            .map(|i| {
                let mut init = rng.substream(&format!("member-{i}/init"));
                GaussianDynamicsModel::new(state_dim, cond_dim, hidden, conditioner, lr, &mut init)
            })
            .collect();
        let batch_rngs = (0..size).map(|i| rng.substream(&format!("member-{i}/minibatch"))).collect();
        Self { members, batch_rngs }
    }

    pub fn from_members(members: Vec<GaussianDynamicsModel>, rng: &RngStream) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::contract("ensemble needs at least one member"));
        }
        let batch_rngs = (0..members.len()).map(|i| rng.substream(&format!("member-{i}/minibatch"))).collect();
        Ok(Self { members, batch_rngs })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[GaussianDynamicsModel] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [GaussianDynamicsModel] {
        &mut self.members
    }

    pub fn conditioner(&self) -> Conditioner {
        self.members[0].conditioner()
    }

    pub fn state_dim(&self) -> usize {
        self.members[0].state_dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.members[0].cond_dim()
    }

    pub fn normalizers(&self) -> (&Normalizer, &Normalizer) {
        self.members[0].normalizers()
    }

    pub fn set_normalizers(&mut self, state: Normalizer, delta: Normalizer) {
        for m in &mut self.members {
            m.set_normalizers(state.clone(), delta.clone());
        }
    }

    pub fn update_normalizers(&mut self, data: &[Transition]) {
        self.members[0].update_normalizers(data);
        let (s, d) = self.members[0].normalizers();
        let (s, d) = (s.clone(), d.clone());
        for m in &mut self.members[1..] {
            m.set_normalizers(s.clone(), d.clone());
        }
    }

    pub fn predict(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Result<EnsemblePrediction> {
        self.members[0].check_shapes(states, conds)?;
        let members: Vec<Array2<f64>> = self.members.iter().map(|m| m.predict_normalized(states, conds)).collect();
        let mean_norm = mean_of(&members);
        let mean_next = self.members[0].denormalize_next(states, &mean_norm);
        Ok(EnsemblePrediction { members, mean_next })
    }

    /// Ensemble-mean next state for a single `(s, c)`.
    pub fn predict_mean(&self, s: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let states = ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::contract(e.to_string()))?;
        let conds = ArrayView2::from_shape((1, c.len()), c).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict(states, conds)?.mean_next.row(0).to_vec())
    }

    /// `Tr Var_i[mu(s, c; theta_i)]` with the 1/E divisor, in normalized
    /// delta space.
    pub fn disagreement_trace(&self, s: &[f64], c: &[f64]) -> Result<f64> {
        self.require_pairs()?;
        let states = ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::contract(e.to_string()))?;
        let conds = ArrayView2::from_shape((1, c.len()), c).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict(states, conds)?.disagreement()[0])
    }

    pub fn disagreement_batch(&self, states: ArrayView2<f64>, conds: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.require_pairs()?;
        Ok(self.predict(states, conds)?.disagreement())
    }

    /// `-lambda * max_{i,j} ||mu_i - mu_j||^2` in normalized delta space.
    pub fn mopo_penalty(&self, s: &[f64], c: &[f64], lambda: f64) -> Result<f64> {
        self.require_pairs()?;
        if !(lambda >= 0.0) {
            return Err(Error::contract(format!("penalty coefficient must be >= 0, got {lambda}")));
        }
        let states = ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::contract(e.to_string()))?;
        let conds = ArrayView2::from_shape((1, c.len()), c).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict(states, conds)?.penalty(lambda)[0])
    }

    fn require_pairs(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::contract(format!("disagreement needs at least 2 members, have {}", self.members.len())));
        }
        Ok(())
    }

    /// One Adam step per member, each on its own shuffled minibatch drawn
    /// from `data`. Returns the mean pre-step loss over members.
    pub fn fit_step(&mut self, data: &[Transition], batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyBatch("ensemble fit"));
        }
        let cond = self.conditioner();
        let take = batch_size.min(data.len()).max(1);
        let losses: Vec<Result<f64>> = self
            .members
            .par_iter_mut()
            .zip(self.batch_rngs.par_iter_mut())
            .map(|(member, rng)| {
                let idx = minibatch_indices(rng, data.len(), take);
                let batch = FitBatch::gather(data, &idx, cond);
                member.fit_batch(&batch)
            })
            .collect();
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / self.members.len() as f64)
    }

    /// Fits every member on the same explicit batch (no resampling).
    pub fn fit_batch_all(&mut self, batch: &FitBatch) -> Result<Vec<f64>> {
        self.members.iter_mut().map(|m| m.fit_batch(batch)).collect()
    }

    /// Mean squared one-step error of the ensemble mean in raw state units.
    pub fn one_step_mse(&self, data: &[Transition]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyBatch("mse evaluation"));
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let batch = FitBatch::gather(data, &idx, self.conditioner());
        let pred = self.predict(batch.states.view(), batch.conds.view())?;
        let diff = &pred.mean_next - &batch.next_states;
        Ok(diff.mapv(|v| v * v).mean().unwrap_or(0.0))
    }
}

/// Partial Fisher-Yates: `take` distinct indices from `0..n`.
pub(crate) fn minibatch_indices(rng: &mut RngStream, n: usize, take: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..take.min(n) {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(take.min(n));
    idx
}
