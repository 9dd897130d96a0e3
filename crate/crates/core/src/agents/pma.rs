//! The unsupervised phase: an action decoder trained to emit only
//! transitions its own models can predict.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::buffer::{PmaBuffers, DEFAULT_REPLAY_CAPACITY};
use super::sac::{Sac, SacBatch, SacConfig};
use crate::dynamics::{minibatch_indices, Conditioner, EnsembleDynamics, FitBatch, GaussianDynamicsModel};
use crate::envs::{ActionMode, Env, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::intrinsic::{intrinsic_reward_batch, IntrinsicConfig};
use crate::math::rng::labels;
use crate::math::{RngStream, DEFAULT_LR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmaConfig {
    /// Defaults to the environment's action dimension.
    #[serde(default)]
    pub latent_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub steps_per_epoch: usize,
    pub policy_steps: usize,
    pub model_steps: usize,
    pub model_batch_size: usize,
    pub model_lr: f64,
    pub ensemble_size: usize,
    pub replay_capacity: usize,
    pub intrinsic: IntrinsicConfig,
    pub sac: SacConfig,
}

impl Default for PmaConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden: vec![64, 64],
            steps_per_epoch: 1000,
            policy_steps: 64,
            model_steps: 32,
            model_batch_size: 256,
            model_lr: DEFAULT_LR,
            ensemble_size: 5,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            intrinsic: IntrinsicConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl PmaConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("{path}.{field}"), msg));
        if self.latent_dim == Some(0) {
            return bad("latent_dim", "must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer width");
        }
        if self.steps_per_epoch < 2 || !self.steps_per_epoch.is_multiple_of(2) {
            return bad("steps_per_epoch", "must be a positive even number");
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
        if !(self.model_lr >= 0.0) {
            return bad("model_lr", "must be >= 0");
        }
        self.intrinsic.validate().map_err(|e| match e {
            Error::Config { path: p, msg } => Error::config(format!("{path}.{p}"), msg),
            other => other,
        })?;
        self.sac.validate(&format!("{path}.sac"))
    }
}

/// One uniform latent action on `[-1, 1]^dim`.
pub fn uniform_latent(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    rng.uniform_box(dim)
}

/// Decoder input: the observation followed by the latent action.
pub fn decoder_input(s: &[f64], z: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + z.len());
    x.extend_from_slice(s);
    x.extend_from_slice(z);
    x
}

/// Raw action chosen by the decoder for `(s, z)`.
pub fn decoder_action(decoder: &Sac, s: &[f64], z: &[f64], mode: ActionMode, rng: &mut RngStream) -> Result<Vec<f64>> {
    decoder.policy.act(&decoder_input(s, z), mode, rng)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: u64,
    pub vlb_loss: Option<f64>,
    pub ensemble_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub entropy: Option<f64>,
    pub intrinsic_reward: Option<f64>,
    /// Mean ensemble disagreement over this epoch's deterministic transitions.
    pub deterministic_disagreement: Option<f64>,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Streams {
    policy: RngStream,
    latent: RngStream,
    env: RngStream,
    minibatch: RngStream,
    intrinsic: RngStream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            policy: RngStream::new(seed, labels::POLICY).substream("act"),
            latent: RngStream::new(seed, labels::LATENT),
            env: RngStream::new(seed, labels::ENV),
            minibatch: RngStream::new(seed, labels::MINIBATCH),
            intrinsic: RngStream::new(seed, labels::INTRINSIC),
        }
    }
}

/// Decoder, predictive models and buffers of one unsupervised run.
#[derive(Debug, Clone)]
pub struct PmaAgent {
    pub cfg: PmaConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub decoder: Sac,
    pub vlb: GaussianDynamicsModel,
    pub ensemble: EnsembleDynamics,
    pub buffers: PmaBuffers,
    pub epochs_done: usize,
    streams: Streams,
}

impl PmaAgent {
    pub fn new(spec: &EnvSpec, cfg: PmaConfig, seed: u64) -> Result<Self> {
        cfg.validate("pma")?;
        let state_dim = spec.state_dim;
        let action_dim = spec.action_dim;
        let latent_dim = cfg.latent_dim.unwrap_or(action_dim);
        let mut policy_init = RngStream::new(seed, labels::POLICY).substream("init");
        let decoder = Sac::new(state_dim + latent_dim, action_dim, &cfg.hidden, cfg.sac.clone(), &mut policy_init);
        let model_rng = RngStream::new(seed, labels::MODEL_INIT);
        let vlb = GaussianDynamicsModel::new(
            state_dim,
            latent_dim,
            &cfg.hidden,
            Conditioner::Latent,
            cfg.model_lr,
            &mut model_rng.substream("vlb"),
        );
        let ensemble = EnsembleDynamics::new(
            cfg.ensemble_size,
            state_dim,
            latent_dim,
            &cfg.hidden,
            Conditioner::Latent,
            cfg.model_lr,
            &model_rng.substream("ensemble"),
        );
        let buffers = PmaBuffers::new(cfg.replay_capacity);
        Ok(Self {
            cfg,
            state_dim,
            action_dim,
            latent_dim,
            decoder,
            vlb,
            ensemble,
            buffers,
            epochs_done: 0,
            streams: Streams::new(seed),
        })
    }

    /// Collects `steps_per_epoch / 2` stochastic and as many deterministic
    /// transitions, drawing one fresh uniform latent per step.
    pub fn collect(&mut self, env: &Env) -> Result<()> {
        let half = self.cfg.steps_per_epoch / 2;
        for mode in [ActionMode::Stochastic, ActionMode::Deterministic] {
            let mut s = env.reset(&mut self.streams.env);
            let mut t = 0;
            for _ in 0..half {
                let z = uniform_latent(self.latent_dim, &mut self.streams.latent);
                let a = decoder_action(&self.decoder, &s, &z, mode, &mut self.streams.policy)?;
                let (s_next, done) = env.step(&s, &a, &mut self.streams.env)?;
                t += 1;
                let tr = Transition { s: s.clone(), z: Some(z), a, r: 0.0, s_next: s_next.clone(), done, mode };
                self.buffers.push(tr);
                if done || t >= env.horizon() {
                    s = env.reset(&mut self.streams.env);
                    t = 0;
                } else {
                    s = s_next;
                }
            }
        }
        Ok(())
    }

    /// Model fitting and actor-critic updates on the collected data, then
    /// clears the on-policy buffers.
    pub fn train(&mut self, env_steps: u64) -> Result<EpochMetrics> {
        let mut m = EpochMetrics { epoch: self.epochs_done, env_steps, ..Default::default() };
        let d_s = self.buffers.stochastic().to_vec();
        let d_d = self.buffers.deterministic().to_vec();
        coverage(&d_s, &d_d, self.state_dim, &mut m);

        if !d_s.is_empty() {
            self.vlb.update_normalizers(&d_s);
        }
        if !d_d.is_empty() {
            self.ensemble.update_normalizers(&d_d);
        }

        if self.cfg.model_steps > 0 {
            let mut vlb_total = 0.0;
            let mut ens_total = 0.0;
            for _ in 0..self.cfg.model_steps {
                if !d_s.is_empty() {
                    let take = self.cfg.model_batch_size.min(d_s.len());
                    let idx = minibatch_indices(&mut self.streams.minibatch, d_s.len(), take);
                    vlb_total += self.vlb.fit_batch(&FitBatch::gather(&d_s, &idx, Conditioner::Latent))?;
                }
                if !d_d.is_empty() {
                    ens_total += self.ensemble.fit_step(&d_d, self.cfg.model_batch_size)?;
                }
            }
            let k = self.cfg.model_steps as f64;
            m.vlb_loss = (!d_s.is_empty()).then_some(vlb_total / k);
            m.ensemble_loss = (!d_d.is_empty()).then_some(ens_total / k);
        }

        if !d_d.is_empty() {
            let idx: Vec<usize> = (0..d_d.len()).collect();
            let b = FitBatch::gather(&d_d, &idx, Conditioner::Latent);
            let dis = self.ensemble.disagreement_batch(b.states.view(), b.conds.view())?;
            m.deterministic_disagreement = Some(dis.iter().sum::<f64>() / dis.len() as f64);
        }

        if self.cfg.policy_steps > 0 && !self.buffers.replay.is_empty() {
            let (mut cl, mut al, mut ent, mut rew) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..self.cfg.policy_steps {
                let batch = self.sample_decoder_batch()?;
                cl += batch.1.critic_loss;
                al += batch.1.actor_loss;
                ent += batch.1.entropy;
                rew += batch.0;
            }
            let k = self.cfg.policy_steps as f64;
            m.critic_loss = Some(cl / k);
            m.actor_loss = Some(al / k);
            m.entropy = Some(ent / k);
            m.intrinsic_reward = Some(rew / k);
        }
        m.alpha = self.decoder.alpha();

        self.buffers.clear_on_policy();
        self.epochs_done += 1;
        Ok(m)
    }

    /// One decoder update on a replay minibatch; returns the mean recomputed
    /// intrinsic reward and the update report.
    fn sample_decoder_batch(&mut self) -> Result<(f64, super::sac::SacReport)> {
        let n = self.cfg.sac.batch_size;
        let idx = self.buffers.replay.sample_indices(n, &mut self.streams.minibatch)?;
        let (sd, zd, ad) = (self.state_dim, self.latent_dim, self.action_dim);
        let mut states = Array2::zeros((n, sd));
        let mut zs = Array2::zeros((n, zd));
        let mut next = Array2::zeros((n, sd));
        let mut inputs = Array2::zeros((n, sd + zd));
        let mut next_inputs = Array2::zeros((n, sd + zd));
        let mut actions = Array2::zeros((n, ad));
        let mut dones = Vec::with_capacity(n);
        for (r, &i) in idx.iter().enumerate() {
            let t = self.buffers.replay.get(i);
            let z = t.z.as_deref().ok_or_else(|| Error::contract("replay transition without latent action"))?;
            for j in 0..sd {
                states[[r, j]] = t.s[j];
                next[[r, j]] = t.s_next[j];
                inputs[[r, j]] = t.s[j];
                next_inputs[[r, j]] = t.s_next[j];
            }
            for j in 0..zd {
                zs[[r, j]] = z[j];
                inputs[[r, sd + j]] = z[j];
                next_inputs[[r, sd + j]] = self.streams.latent.uniform_range(-1.0, 1.0);
            }
            for j in 0..ad {
                actions[[r, j]] = t.a[j];
            }
            dones.push(t.done);
        }
        let rewards = intrinsic_reward_batch(
            &self.vlb,
            &self.ensemble,
            states.view(),
            zs.view(),
            next.view(),
            &self.cfg.intrinsic,
            &mut self.streams.intrinsic,
        )?;
        let mean_r = rewards.iter().sum::<f64>() / n as f64;
        let batch = SacBatch { inputs, actions, rewards, next_inputs, dones };
        let report = self.decoder.update(&batch, &mut self.streams.policy)?;
        Ok((mean_r, report))
    }

    /// Deterministic decoded action, as used by downstream planners.
    pub fn decode(&self, s: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut unused = RngStream::new(0, "unused");
        decoder_action(&self.decoder, s, z, ActionMode::Deterministic, &mut unused)
    }

    /// Batched deterministic decoding.
    pub fn decode_batch(&self, states: ndarray::ArrayView2<f64>, zs: ndarray::ArrayView2<f64>) -> Array2<f64> {
        let x = crate::math::mlp::hcat(&[states.reborrow(), zs.reborrow()]);
        self.decoder.act_deterministic(x.view())
    }
}

fn coverage(d_s: &[Transition], d_d: &[Transition], dim: usize, m: &mut EpochMetrics) {
    let n = (d_s.len() + d_d.len()) as f64;
    if n == 0.0 {
        return;
    }
    let mut mean = vec![0.0; dim];
    for t in d_s.iter().chain(d_d) {
        for j in 0..dim {
            mean[j] += t.s_next[j] / n;
        }
    }
    let mut var = vec![0.0; dim];
    for t in d_s.iter().chain(d_d) {
        for j in 0..dim {
            var[j] += (t.s_next[j] - mean[j]).powi(2) / n;
        }
    }
    m.state_std = var.into_iter().map(f64::sqrt).collect();
    m.state_mean = mean;
}

/// One full epoch: collection, model fitting, decoder updates, buffer reset.
pub fn pma_epoch(agent: &mut PmaAgent, env: &Env) -> Result<EpochMetrics> {
    agent.collect(env)?;
    agent.train(env.real_steps())
}
