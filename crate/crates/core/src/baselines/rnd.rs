use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dynamics::Normalizer;
use crate::error::Result;
use crate::math::{AdamState, Mlp, RngStream};

pub const DEFAULT_EMBED_DIM: usize = 32;

/// Frozen random target network and a predictor regressed onto it.
#[derive(Debug, Clone)]
pub struct RndPair {
    target: Mlp,
    predictor: Mlp,
    adam: AdamState,
    bonus_stats: Normalizer,
}

impl RndPair {
    pub fn new(state_dim: usize, hidden: &[usize], embed_dim: usize, lr: f64, rng: &mut RngStream) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(embed_dim);
        let target = Mlp::new(&sizes, &mut rng.substream("target"));
        let predictor = Mlp::new(&sizes, &mut rng.substream("predictor"));
        let adam = AdamState::new("rnd-predictor", predictor.num_params(), lr);
        Self { target, predictor, adam, bonus_stats: Normalizer::new(1) }
    }

    pub fn from_nets(target: Mlp, predictor: Mlp, lr: f64) -> Self {
        let adam = AdamState::new("rnd-predictor", predictor.num_params(), lr);
        Self { target, predictor, adam, bonus_stats: Normalizer::new(1) }
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    /// Squared embedding error per row; never negative.
    pub fn bonus_batch(&self, states: ArrayView2<f64>) -> Vec<f64> {
        let t = self.target.forward_batch(states);
        let p = self.predictor.forward_batch(states);
        (&p - &t).outer_iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
    }

    pub fn bonus(&self, s: &[f64]) -> Result<f64> {
        let t = self.target.forward(s)?;
        let p = self.predictor.forward(s)?;
        Ok(t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Bonus divided by the running standard deviation of observed bonuses.
    pub fn normalized_bonus_batch(&mut self, states: ArrayView2<f64>) -> Vec<f64> {
        let raw = self.bonus_batch(states);
        for b in &raw {
            self.bonus_stats.update(&[*b]);
        }
        let sd = self.bonus_stats.std_at(0);
        raw.into_iter().map(|b| b / sd).collect()
    }

    /// One predictor step on `states`; returns the pre-step mean bonus.
    pub fn train_step(&mut self, states: ArrayView2<f64>) -> Result<f64> {
        let n = states.nrows().max(1) as f64;
        let t = self.target.forward_batch(states);
        let (p, cache) = self.predictor.forward_cached(states)?;
        let diff: Array2<f64> = &p - &t;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
        let grad_out = diff.mapv(|v| 2.0 * v / n);
        let g = self.predictor.gradient(&cache, grad_out.view())?;
        self.adam.step(self.predictor.params_mut(), &g.params)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RndConfig {
    pub embed_dim: usize,
    pub lr: f64,
    /// Predictor gradient steps per epoch.
    pub steps_per_epoch: usize,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self { embed_dim: DEFAULT_EMBED_DIM, lr: crate::math::DEFAULT_LR, steps_per_epoch: 1 }
    }
}
