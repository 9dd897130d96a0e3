//! Maximum-entropy actor-critic with twin critics and a learned temperature.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::critic::CriticPair;
use super::policy::SquashedGaussianPolicy;
use crate::error::{Error, Result};
use crate::math::{AdamState, RngStream, DEFAULT_LR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    /// Polyak coefficient: `target <- tau * target + (1 - tau) * online`.
    pub tau: f64,
    pub lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    pub batch_size: usize,
    /// Defaults to `-dim(action)` when absent.
    #[serde(default)]
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            tau: 0.995,
            lr: DEFAULT_LR,
            alpha_lr: DEFAULT_LR,
            initial_alpha: 0.1,
            batch_size: 256,
            target_entropy: None,
        }
    }
}

impl SacConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("{path}.{field}"), msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        if !(self.lr >= 0.0) || !(self.alpha_lr >= 0.0) {
            return bad("lr", "learning rates must be >= 0");
        }
        if !(self.initial_alpha > 0.0) {
            return bad("initial_alpha", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        Ok(())
    }
}

/// One minibatch for an actor-critic step. `inputs` is whatever the policy
/// conditions on (state, or state and latent action).
#[derive(Debug, Clone)]
pub struct SacBatch {
    pub inputs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_inputs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl SacBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub mean_q: f64,
}

/// Policy, critics and temperature trained together.
#[derive(Debug, Clone)]
pub struct Sac {
    pub policy: SquashedGaussianPolicy,
    pub critics: CriticPair,
    log_alpha: f64,
    alpha_adam: AdamState,
    cfg: SacConfig,
}

impl Sac {
    pub fn new(input_dim: usize, action_dim: usize, hidden: &[usize], cfg: SacConfig, rng: &mut RngStream) -> Self {
        let policy = SquashedGaussianPolicy::new(input_dim, action_dim, hidden, cfg.lr, rng);
        let critics = CriticPair::new(input_dim, action_dim, hidden, cfg.lr, rng);
        Self::from_parts(policy, critics, cfg)
    }

    pub fn from_parts(policy: SquashedGaussianPolicy, critics: CriticPair, cfg: SacConfig) -> Self {
        let alpha_adam = AdamState::new("temperature", 1, cfg.alpha_lr);
        Self { policy, critics, log_alpha: cfg.initial_alpha.ln(), alpha_adam, cfg }
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.policy.action_dim() as f64))
    }

    /// Sets every learning rate, including the temperature's.
    pub fn set_learning_rates(&mut self, lr: f64) {
        self.policy.set_lr(lr);
        self.critics.set_lr(lr);
        self.alpha_adam.lr = lr;
    }

    /// One critic step, one actor step, one temperature step and one Polyak
    /// update. Rewards must already be present in the batch.
    pub fn update(&mut self, batch: &SacBatch, rng: &mut RngStream) -> Result<SacReport> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("actor-critic update"));
        }
        let n = batch.len();
        let alpha = self.alpha();

        let next = self.policy.sample(batch.next_inputs.view(), rng)?;
        let next_q = self.critics.target_min_q(batch.next_inputs.view(), next.actions.view());
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + self.cfg.gamma * cont * (next_q[i] - alpha * next.log_probs[i])
            })
            .collect();
        let critic_loss = self.critics.regress(batch.inputs.view(), batch.actions.view(), &targets)?;

        let smp = self.policy.sample(batch.inputs.view(), rng)?;
        let (q, dq_da) = self.critics.min_q_with_action_grad(batch.inputs.view(), smp.actions.view())?;
        let inv = 1.0 / n as f64;
        let actor_loss = (0..n).map(|i| alpha * smp.log_probs[i] - q[i]).sum::<f64>() * inv;
        let coef = vec![alpha * inv; n];
        let grad_a = dq_da.mapv(|g| -g * inv);
        self.policy.step_from_sample(&smp, &coef, grad_a.view())?;

        let mean_logp = smp.log_probs.iter().sum::<f64>() * inv;
        let grad_log_alpha = -(mean_logp + self.target_entropy());
        let mut la = [self.log_alpha];
        self.alpha_adam.step(&mut la, &[grad_log_alpha])?;
        self.log_alpha = la[0];

        self.critics.polyak(self.cfg.tau);
        Ok(SacReport {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            entropy: -mean_logp,
            mean_q: q.iter().sum::<f64>() * inv,
        })
    }

    /// Deterministic actions for a batch of inputs.
    pub fn act_deterministic(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        self.policy.mean_actions(inputs)
    }
}

/// Fills the batch's rewards from `reward_fn` (recomputed at sample time),
/// then runs [`Sac::update`].
pub fn sac_update<F>(sac: &mut Sac, batch: &mut SacBatch, reward_fn: F, rng: &mut RngStream) -> Result<SacReport>
where
    F: FnOnce(&SacBatch) -> Result<Vec<f64>>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch("actor-critic update"));
    }
    let rewards = reward_fn(batch)?;
    if rewards.len() != batch.len() {
        return Err(Error::contract(format!("reward_fn returned {} rewards for {} rows", rewards.len(), batch.len())));
    }
    batch.rewards = rewards;
    sac.update(batch, rng)
}
