//! Classic action-conditioned models whose only difference is how the
//! unsupervised data is collected.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::rnd::{RndConfig, RndPair};
use crate::agents::{ReplayBuffer, Sac, SacBatch, SacConfig, DEFAULT_REPLAY_CAPACITY};
use crate::dynamics::{minibatch_indices, Conditioner, EnsembleDynamics};
use crate::envs::{ActionMode, Env, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::math::rng::labels;
use crate::math::{RngStream, DEFAULT_LR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collector {
    Random,
    Disagreement,
    Rnd,
    /// Reuses the replay buffer of a finished latent-action run.
    PmaData,
}

impl Collector {
    pub const ALL: [Collector; 4] = [Collector::Random, Collector::Disagreement, Collector::Rnd, Collector::PmaData];

    pub fn as_str(&self) -> &'static str {
        match self {
            Collector::Random => "random",
            Collector::Disagreement => "disagreement",
            Collector::Rnd => "rnd",
            Collector::PmaData => "pma_data",
        }
    }
}

impl fmt::Display for Collector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Collector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Collector::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config("collector", format!("unknown collector `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicConfig {
    pub hidden: Vec<usize>,
    pub steps_per_epoch: usize,
    pub policy_steps: usize,
    pub model_steps: usize,
    pub model_batch_size: usize,
    pub model_lr: f64,
    pub ensemble_size: usize,
    pub replay_capacity: usize,
    /// Scale of the disagreement exploration reward.
    pub disagreement_beta: f64,
    pub rnd: RndConfig,
    pub sac: SacConfig,
}

impl Default for ClassicConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps_per_epoch: 1000,
            policy_steps: 64,
            model_steps: 32,
            model_batch_size: 256,
            model_lr: DEFAULT_LR,
            ensemble_size: 5,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            disagreement_beta: 10.0,
            rnd: RndConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl ClassicConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("{path}.{field}"), msg));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer width");
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch", "must be >= 1");
        }
        if self.model_batch_size == 0 {
            return bad("model_batch_size", "must be >= 1");
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size", "disagreement needs at least 2 members");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity", "must be >= 1");
        }
        if !(self.disagreement_beta >= 0.0) {
            return bad("disagreement_beta", "must be >= 0");
        }
        if self.rnd.embed_dim == 0 {
            return bad("rnd.embed_dim", "must be >= 1");
        }
        self.sac.validate(&format!("{path}.sac"))
    }
}

/// `beta * Tr Var_i[mu(s, a; theta_i)]` on an action-conditioned ensemble.
pub fn disagreement_explore_reward(ensemble: &EnsembleDynamics, s: &[f64], a: &[f64], beta: f64) -> Result<f64> {
    if ensemble.conditioner() != Conditioner::Action {
        return Err(Error::contract("exploration reward needs an action-conditioned ensemble"));
    }
    Ok(beta * ensemble.disagreement_trace(s, a)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassicEpochMetrics {
    pub epoch: usize,
    pub env_steps: u64,
    pub ensemble_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub explore_reward: Option<f64>,
    pub rnd_loss: Option<f64>,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

/// Action-conditioned ensemble plus whatever its collector needs.
#[derive(Debug, Clone)]
pub struct ClassicAgent {
    pub cfg: ClassicConfig,
    pub collector: Collector,
    pub state_dim: usize,
    pub action_dim: usize,
    pub ensemble: EnsembleDynamics,
    pub replay: ReplayBuffer,
    pub explorer: Option<Sac>,
    pub rnd: Option<RndPair>,
    pub epochs_done: usize,
    policy_rng: RngStream,
    action_rng: RngStream,
    env_rng: RngStream,
    minibatch_rng: RngStream,
}

impl ClassicAgent {
    pub fn new(spec: &EnvSpec, collector: Collector, cfg: ClassicConfig, seed: u64) -> Result<Self> {
        cfg.validate("classic")?;
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let model_rng = RngStream::new(seed, labels::MODEL_INIT);
        let ensemble = EnsembleDynamics::new(
            cfg.ensemble_size,
            sd,
            ad,
            &cfg.hidden,
            Conditioner::Action,
            cfg.model_lr,
            &model_rng.substream("ensemble"),
        );
        let mut init = RngStream::new(seed, labels::POLICY).substream("init");
        let explorer = matches!(collector, Collector::Disagreement | Collector::Rnd)
            .then(|| Sac::new(sd, ad, &cfg.hidden, cfg.sac.clone(), &mut init));
        let rnd = (collector == Collector::Rnd)
            .then(|| RndPair::new(sd, &cfg.hidden, cfg.rnd.embed_dim, cfg.rnd.lr, &mut RngStream::new(seed, "rnd")));
        Ok(Self {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg,
            collector,
            state_dim: sd,
            action_dim: ad,
            ensemble,
            explorer,
            rnd,
            epochs_done: 0,
            policy_rng: RngStream::new(seed, labels::POLICY).substream("act"),
            action_rng: RngStream::new(seed, labels::LATENT),
            env_rng: RngStream::new(seed, labels::ENV),
            minibatch_rng: RngStream::new(seed, labels::MINIBATCH),
        })
    }

    fn action(&mut self, s: &[f64]) -> Result<Vec<f64>> {
        match &self.explorer {
            Some(sac) => sac.policy.act(s, ActionMode::Stochastic, &mut self.policy_rng),
            None => Ok(self.action_rng.uniform_box(self.action_dim)),
        }
    }

    /// Collects `steps_per_epoch` fresh transitions into the replay buffer.
    pub fn collect(&mut self, env: &Env) -> Result<Vec<Transition>> {
        if self.collector == Collector::PmaData {
            return Err(Error::contract("the pma_data collector never touches the environment"));
        }
        let mut fresh = Vec::with_capacity(self.cfg.steps_per_epoch);
        let mut s = env.reset(&mut self.env_rng);
        let mut t = 0;
        for _ in 0..self.cfg.steps_per_epoch {
            let a = self.action(&s)?;
            let (s_next, done) = env.step(&s, &a, &mut self.env_rng)?;
            t += 1;
            let tr = Transition {
                s: s.clone(),
                z: None,
                a,
                r: 0.0,
                s_next: s_next.clone(),
                done,
                mode: ActionMode::Stochastic,
            };
            fresh.push(tr.clone());
            self.replay.push(tr);
            if done || t >= env.horizon() {
                s = env.reset(&mut self.env_rng);
                t = 0;
            } else {
                s = s_next;
            }
        }
        Ok(fresh)
    }

    /// Normalizer update on `fresh`, model fitting on the whole replay, and
    /// exploration-policy updates when the collector has one.
    pub fn train(&mut self, fresh: &[Transition], env_steps: u64) -> Result<ClassicEpochMetrics> {
        let mut m = ClassicEpochMetrics { epoch: self.epochs_done, env_steps, ..Default::default() };
        (m.state_mean, m.state_std) = state_moments(fresh, self.state_dim);
        if !fresh.is_empty() {
            self.ensemble.update_normalizers(fresh);
        }
        let data = self.replay.as_slice();
        if self.cfg.model_steps > 0 && !data.is_empty() {
            let mut total = 0.0;
            for _ in 0..self.cfg.model_steps {
                total += self.ensemble.fit_step(data, self.cfg.model_batch_size)?;
            }
            m.ensemble_loss = Some(total / self.cfg.model_steps as f64);
        }
        if let Some(rnd) = &mut self.rnd {
            if !data.is_empty() && self.cfg.rnd.steps_per_epoch > 0 {
                let mut total = 0.0;
                for _ in 0..self.cfg.rnd.steps_per_epoch {
                    let take = self.cfg.model_batch_size.min(data.len());
                    let idx = minibatch_indices(&mut self.minibatch_rng, data.len(), take);
                    let states = Array2::from_shape_fn((take, self.state_dim), |(r, j)| data[idx[r]].s_next[j]);
                    total += rnd.train_step(states.view())?;
                }
                m.rnd_loss = Some(total / self.cfg.rnd.steps_per_epoch as f64);
            }
        }
        if self.explorer.is_some() && self.cfg.policy_steps > 0 && !self.replay.is_empty() {
            let (mut cl, mut rew) = (0.0, 0.0);
            for _ in 0..self.cfg.policy_steps {
                let (r, report) = self.explorer_step()?;
                cl += report.critic_loss;
                rew += r;
            }
            let k = self.cfg.policy_steps as f64;
            m.critic_loss = Some(cl / k);
            m.explore_reward = Some(rew / k);
        }
        self.epochs_done += 1;
        Ok(m)
    }

    fn explorer_step(&mut self) -> Result<(f64, crate::agents::SacReport)> {
        let n = self.cfg.sac.batch_size;
        let idx = self.replay.sample_indices(n, &mut self.minibatch_rng)?;
        let (sd, ad) = (self.state_dim, self.action_dim);
        let data = self.replay.as_slice();
        let inputs = Array2::from_shape_fn((n, sd), |(r, j)| data[idx[r]].s[j]);
        let next_inputs = Array2::from_shape_fn((n, sd), |(r, j)| data[idx[r]].s_next[j]);
        let actions = Array2::from_shape_fn((n, ad), |(r, j)| data[idx[r]].a[j]);
        let dones = idx.iter().map(|&i| data[i].done).collect();
        let rewards = match self.collector {
            Collector::Disagreement => {
                let d = self.ensemble.disagreement_batch(inputs.view(), actions.view())?;
                d.into_iter().map(|v| self.cfg.disagreement_beta * v).collect()
            }
            Collector::Rnd => self.rnd.as_mut().expect("rnd collector").normalized_bonus_batch(next_inputs.view()),
            _ => unreachable!("only exploring collectors train a policy"),
        };
        let mean_r = rewards.iter().sum::<f64>() / n as f64;
        let batch = SacBatch { inputs, actions, rewards, next_inputs, dones };
        let sac = self.explorer.as_mut().expect("explorer present");
        let report = sac.update(&batch, &mut self.policy_rng)?;
        Ok((mean_r, report))
    }
}

fn state_moments(data: &[Transition], dim: usize) -> (Vec<f64>, Vec<f64>) {
    if data.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for t in data {
        t.s_next.iter().enumerate().for_each(|(j, v)| mean[j] += v / n);
    }
    let mut var = vec![0.0; dim];
    for t in data {
        t.s_next.iter().enumerate().for_each(|(j, v)| var[j] += (v - mean[j]).powi(2) / n);
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Runs `epochs` epochs of a collecting baseline against `env`.
pub fn train_classic(
    collector: Collector,
    env: &Env,
    cfg: ClassicConfig,
    epochs: usize,
    seed: u64,
) -> Result<(ClassicAgent, Vec<ClassicEpochMetrics>)> {
    if collector == Collector::PmaData {
        return Err(Error::contract("pma_data needs a replay buffer; use train_classic_on_replay"));
    }
    let mut agent = ClassicAgent::new(env.spec(), collector, cfg, seed)?;
    let mut metrics = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let fresh = agent.collect(env)?;
        metrics.push(agent.train(&fresh, env.real_steps())?);
    }
    Ok((agent, metrics))
}

/// Fits a classic model on the replay of a finished latent-action run,
/// without any new environment interaction. `budget_steps` is recorded as
/// the run's step count.
pub fn train_classic_on_replay(
    spec: &EnvSpec,
    replay: Option<&ReplayBuffer>,
    cfg: ClassicConfig,
    epochs: usize,
    seed: u64,
    budget_steps: u64,
) -> Result<(ClassicAgent, Vec<ClassicEpochMetrics>)> {
    let replay = replay.filter(|r| !r.is_empty()).ok_or_else(|| {
        Error::config("pma_replay", "pma_data requires a non-empty replay buffer from a finished run")
    })?;
    let mut agent = ClassicAgent::new(spec, Collector::PmaData, cfg, seed)?;
    for t in replay.as_slice() {
        agent.replay.push(t.clone());
    }
    let mut metrics = Vec::with_capacity(epochs);
    let all = agent.replay.as_slice().to_vec();
    for e in 0..epochs {
        let fresh: &[Transition] = if e == 0 { &all } else { &[] };
        metrics.push(agent.train(fresh, budget_steps)?);
    }
    Ok((agent, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FitBatch, GaussianDynamicsModel};
    use crate::math::Mlp;

    fn small() -> ClassicConfig {
        ClassicConfig {
            hidden: vec![16, 16],
            steps_per_epoch: 50,
            policy_steps: 2,
            model_steps: 2,
            model_batch_size: 16,
            ensemble_size: 3,
            sac: SacConfig { batch_size: 16, ..Default::default() },
            ..Default::default()
        }
    }

    fn ensemble_with_biases(biases: &[[f64; 2]], cond: Conditioner) -> EnsembleDynamics {
        let members = biases
            .iter()
            .map(|b| {
                let mut net = Mlp::zeros(&[3, 2]);
                net.params_mut()[6..].copy_from_slice(b);
                GaussianDynamicsModel::from_parts(cond, 2, 1, net, 1e-3)
            })
            .collect();
        EnsembleDynamics::from_members(members, &RngStream::new(0, "e")).unwrap()
    }

    #[test]
    fn disagreement_reward_examples() {
        let same = ensemble_with_biases(&[[0.3, 0.1], [0.3, 0.1]], Conditioner::Action);
        assert_eq!(disagreement_explore_reward(&same, &[0.0, 0.0], &[0.5], 1.0).unwrap(), 0.0);
        // two members one unit apart on one axis: trace = 0.25
        let e = ensemble_with_biases(&[[0.0, 0.0], [1.0, 0.0]], Conditioner::Action);
        let r = disagreement_explore_reward(&e, &[0.0, 0.0], &[0.5], 2.0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let swapped = ensemble_with_biases(&[[1.0, 0.0], [0.0, 0.0]], Conditioner::Action);
        assert_eq!(r, disagreement_explore_reward(&swapped, &[0.0, 0.0], &[0.5], 2.0).unwrap());
    }

    #[test]
    fn latent_and_classic_fitting_share_code() {
        let mk = |cond| EnsembleDynamics::new(3, 2, 1, &[8, 8], cond, 1e-3, &RngStream::new(5, labels::MODEL_INIT));
        let mut latent = mk(Conditioner::Latent);
        let mut classic = mk(Conditioner::Action);
        let mut rng = RngStream::new(6, "d");
        let batch = FitBatch {
            states: Array2::from_shape_fn((20, 2), |_| rng.uniform_range(-1.0, 1.0)),
            conds: Array2::from_shape_fn((20, 1), |_| rng.uniform_range(-1.0, 1.0)),
            next_states: Array2::from_shape_fn((20, 2), |_| rng.uniform_range(-1.0, 1.0)),
        };
        for _ in 0..5 {
            assert_eq!(latent.fit_batch_all(&batch).unwrap(), classic.fit_batch_all(&batch).unwrap());
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        for collector in [Collector::Random, Collector::Disagreement, Collector::Rnd] {
            let run = || {
                let env = Env::make("two_zone").unwrap();
                let (agent, m) = train_classic(collector, &env, small(), 2, 9).unwrap();
                (agent.ensemble.members()[1].net().params().to_vec(), serde_json::to_string(&m).unwrap())
            };
            assert_eq!(run(), run(), "{collector}");
        }
    }

    #[test]
    fn pma_data_consumes_replay_without_env_steps() {
        let env = Env::make("two_zone").unwrap();
        let mut replay = ReplayBuffer::new(100);
        let mut rng = RngStream::new(0, "x");
        let mut s = env.reset(&mut rng);
        for _ in 0..30 {
            let a = rng.uniform_box(2);
            let (n, _) = env.simulate(&s, &a).unwrap();
            replay.push(Transition {
                s: s.clone(),
                z: Some(vec![0.0, 0.0]),
                a,
                r: 0.0,
                s_next: n.clone(),
                done: false,
                mode: ActionMode::Stochastic,
            });
            s = n;
        }
        let (agent, m) = train_classic_on_replay(env.spec(), Some(&replay), small(), 3, 1, 60).unwrap();
        assert_eq!(agent.replay.len(), 30);
        assert_eq!(agent.ensemble.normalizers().0.count(), 30);
        assert_eq!(env.real_steps(), 0);
        assert!(m.iter().all(|r| r.env_steps == 60));
        assert!(train_classic_on_replay(env.spec(), None, small(), 1, 1, 0).is_err());
        assert!(train_classic(Collector::PmaData, &env, small(), 1, 0).is_err());
    }

    #[test]
    fn collector_names_round_trip() {
        for c in Collector::ALL {
            assert_eq!(c.as_str().parse::<Collector>().unwrap(), c);
        }
        assert!("dads".parse::<Collector>().is_err());
    }
}
