//! Actor-critic training on purely model-generated transitions.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::model::PlanningModel;
use super::mppi::EpisodeOutcome;
use crate::agents::{ReplayBuffer, Sac, SacBatch, SacConfig};
use crate::envs::{ActionMode, Env, Transition};
use crate::error::{Error, Result};
use crate::math::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbpoConfig {
    /// Virtual rollout length `H` before a new start state is drawn.
    pub rollout_horizon: usize,
    /// Probability `P` of starting from the initial-state distribution
    /// rather than from a stored replay state.
    pub reset_prob: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub policy_steps: usize,
    /// Applies `max(0, .)` to the penalized reward.
    #[serde(default)]
    pub clamp_nonnegative: bool,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub sac: SacConfig,
}

impl Default for MbpoConfig {
    fn default() -> Self {
        Self {
            rollout_horizon: 15,
            reset_prob: 0.5,
            lambda: 1.0,
            epochs: 20,
            steps_per_epoch: 1000,
            policy_steps: 64,
            clamp_nonnegative: false,
            hidden: vec![64, 64],
            buffer_capacity: 100_000,
            sac: SacConfig::default(),
        }
    }
}

impl MbpoConfig {
    /// Plain actor-critic inside the model: full-length virtual episodes,
    /// always started from the initial-state distribution.
    pub fn sac_full(mut self, episode_length: usize) -> Self {
        self.rollout_horizon = episode_length;
        self.reset_prob = 1.0;
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("{path}.{field}"), msg));
        if self.rollout_horizon == 0 {
            return bad("rollout_horizon", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.reset_prob) {
            return bad("reset_prob", "must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda", "must be >= 0");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer width");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity", "must be >= 1");
        }
        self.sac.validate(&format!("{path}.sac"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MbpoEpochMetrics {
    pub epoch: usize,
    pub virtual_steps: usize,
    pub starts_from_initial: usize,
    pub starts_from_replay: usize,
    pub mean_reward: f64,
    pub critic_loss: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct MbpoResult {
    pub policy: Sac,
    pub metrics: Vec<MbpoEpochMetrics>,
}

fn row_view(v: &[f64]) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((1, v.len()), v).map_err(|e| Error::contract(e.to_string()))
}

/// Trains a task policy over the model's control space on virtual
/// transitions only. `frozen` supplies start states; it is never extended.
pub fn mbpo_train(
    model: &dyn PlanningModel,
    env: &Env,
    frozen: &[Transition],
    task: &str,
    cfg: &MbpoConfig,
    rng: &mut RngStream,
) -> Result<MbpoResult> {
    cfg.validate("mbpo")?;
    env.check_task(task)?;
    if frozen.is_empty() && cfg.reset_prob < 1.0 {
        return Err(Error::EmptyBatch("frozen replay (needed when reset_prob < 1)"));
    }
    let (sd, cd) = (model.state_dim(), model.control_dim());
    let mut policy = Sac::new(sd, cd, &cfg.hidden, cfg.sac.clone(), &mut rng.substream("init"));
    let mut start_rng = rng.substream("starts");
    let mut act_rng = rng.substream("act");
    let mut update_rng = rng.substream("update");
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut current: Option<(Vec<f64>, usize)> = None;

    for epoch in 0..cfg.epochs {
        let mut m = MbpoEpochMetrics { epoch, ..Default::default() };
        let mut reward_sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let (s, t) = match current.take() {
                Some((s, t)) if t < cfg.rollout_horizon => (s, t),
                _ => {
                    if start_rng.uniform() < cfg.reset_prob {
                        m.starts_from_initial += 1;
                        (env.reset(&mut start_rng), 0)
                    } else {
                        m.starts_from_replay += 1;
                        (frozen[start_rng.below(frozen.len())].s.clone(), 0)
                    }
                }
            };
            let control = policy.policy.act(&s, ActionMode::Stochastic, &mut act_rng)?;
            let (next, pen) = model.predict(row_view(&s)?, row_view(&control)?, cfg.lambda)?;
            let next = next.row(0).to_vec();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinitePrediction { step: t });
            }
            let mut r = env.reward_unchecked(task, &s, &control, &next) + pen[0];
            if cfg.clamp_nonnegative {
                r = r.max(0.0);
            }
            reward_sum += r;
            let done = env.terminated(&next);
            buffer.push(Transition {
                s,
                z: None,
                a: control,
                r,
                s_next: next.clone(),
                done,
                mode: ActionMode::Stochastic,
            });
            m.virtual_steps += 1;
            if !done {
                current = Some((next, t + 1));
            }
        }
        m.mean_reward = if m.virtual_steps > 0 { reward_sum / m.virtual_steps as f64 } else { 0.0 };
        if cfg.policy_steps > 0 && !buffer.is_empty() {
            let mut cl = 0.0;
            for _ in 0..cfg.policy_steps {
                let idx = buffer.sample_indices(cfg.sac.batch_size, &mut update_rng)?;
                let data = buffer.as_slice();
                let n = idx.len();
                let batch = SacBatch {
                    inputs: Array2::from_shape_fn((n, sd), |(r, j)| data[idx[r]].s[j]),
                    actions: Array2::from_shape_fn((n, cd), |(r, j)| data[idx[r]].a[j]),
                    rewards: idx.iter().map(|&i| data[i].r).collect(),
                    next_inputs: Array2::from_shape_fn((n, sd), |(r, j)| data[idx[r]].s_next[j]),
                    dones: idx.iter().map(|&i| data[i].done).collect(),
                };
                cl += policy.update(&batch, &mut update_rng)?.critic_loss;
            }
            m.critic_loss = Some(cl / cfg.policy_steps as f64);
        }
        m.alpha = policy.alpha();
        metrics.push(m);
    }
    Ok(MbpoResult { policy, metrics })
}

/// Runs a deterministic task policy through the model's controls in the
/// real environment for one episode.
pub fn evaluate_policy(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    policy: &Sac,
    rng: &mut RngStream,
) -> Result<EpisodeOutcome> {
    env.check_task(task)?;
    let mut s = env.reset(&mut rng.substream("reset"));
    let mut out = EpisodeOutcome { true_return: 0.0, predicted_return: 0.0, steps: 0 };
    for _ in 0..env.horizon() {
        let control = policy.policy.act(&s, ActionMode::Deterministic, rng)?;
        let (pred, _) = model.predict(row_view(&s)?, row_view(&control)?, 0.0)?;
        out.predicted_return += env.reward_unchecked(task, &s, &control, pred.row(0).as_slice().unwrap());
        let a = model.env_action(&s, &control)?;
        let (s_next, done) = env.step(&s, &a, rng)?;
        out.true_return += env.reward_unchecked(task, &s, &a, &s_next);
        out.steps += 1;
        s = s_next;
        if done {
            break;
        }
    }
    Ok(out)
}

/// Trains on virtual data, then evaluates the deterministic task policy.
pub fn mbpo_zero_shot(
    model: &dyn PlanningModel,
    env: &Env,
    frozen: &[Transition],
    task: &str,
    cfg: &MbpoConfig,
    rng: &mut RngStream,
) -> Result<(MbpoResult, EpisodeOutcome)> {
    let result = mbpo_train(model, env, frozen, task, cfg, &mut rng.substream("train"))?;
    let outcome = evaluate_policy(model, env, task, &result.policy, &mut rng.substream("eval"))?;
    Ok((result, outcome))
}

/// Mean return of a policy that draws a uniform control every step.
pub fn random_control_return(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        for _ in 0..env.horizon() {
            let c = rng.uniform_box(model.control_dim());
            let a = model.env_action(&s, &c)?;
            let (n, done) = env.step(&s, &a, rng)?;
            total += env.reward_unchecked(task, &s, &a, &n);
            s = n;
            if done {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}
