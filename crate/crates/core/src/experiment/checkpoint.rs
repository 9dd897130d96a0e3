//! Checkpoints: `manifest.json` describing every parameter block plus
//! `params.bin` holding the blocks as little-endian f32, in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::agents::{PmaAgent, ReplayBuffer, SquashedGaussianPolicy};
use crate::baselines::ClassicAgent;
use crate::dynamics::{Conditioner, EnsembleDynamics, GaussianDynamicsModel, Normalizer};
use crate::error::{Error, Result};
use crate::math::rng::labels;
use crate::math::{Mlp, RngStream, DEFAULT_LR};
use crate::planners::{ClassicModel, LatentModel, PlanningModel};

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const REPLAY_FILE: &str = "replay.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub sizes: Vec<usize>,
    /// Offset into `params.bin`, in f32 values.
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizerPair {
    pub state: Normalizer,
    pub delta: Normalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub method: Method,
    pub env: String,
    pub seed: u64,
    pub epoch: usize,
    pub env_steps: u64,
    pub blocks: Vec<BlockInfo>,
    pub normalizers: BTreeMap<String, NormalizerPair>,
    pub replay: Option<String>,
}

/// The frozen pieces a zero-shot phase needs from pretraining.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub method: Method,
    pub env: String,
    pub seed: u64,
    pub epoch: usize,
    pub env_steps: u64,
    /// Present for latent-action runs.
    pub decoder: Option<SquashedGaussianPolicy>,
    pub vlb: Option<GaussianDynamicsModel>,
    pub ensemble: EnsembleDynamics,
    pub replay: Option<ReplayBuffer>,
}

fn pair(model: &GaussianDynamicsModel) -> NormalizerPair {
    let (state, delta) = model.normalizers();
    NormalizerPair { state: state.clone(), delta: delta.clone() }
}

impl Artifacts {
    pub fn from_pma(agent: &PmaAgent, env: &str, seed: u64, env_steps: u64) -> Self {
        Self {
            method: Method::Pma,
            env: env.to_owned(),
            seed,
            epoch: agent.epochs_done,
            env_steps,
            decoder: Some(agent.decoder.policy.clone()),
            vlb: Some(agent.vlb.clone()),
            ensemble: agent.ensemble.clone(),
            replay: Some(agent.buffers.replay.clone()),
        }
    }

    pub fn from_classic(agent: &ClassicAgent, method: Method, env: &str, seed: u64, env_steps: u64) -> Self {
        Self {
            method,
            env: env.to_owned(),
            seed,
            epoch: agent.epochs_done,
            env_steps,
            decoder: None,
            vlb: None,
            ensemble: agent.ensemble.clone(),
            replay: Some(agent.replay.clone()),
        }
    }

    /// The frozen model a planner rolls forward.
    pub fn planning_model(&self) -> Result<Box<dyn PlanningModel + '_>> {
        Ok(match &self.decoder {
            Some(decoder) => Box::new(LatentModel::new(decoder, &self.ensemble)?),
            None => Box::new(ClassicModel::new(&self.ensemble)?),
        })
    }

    /// Writes the checkpoint into `dir`; the replay buffer is included only
    /// when `with_replay` is set.
    pub fn save(&self, dir: &Path, with_replay: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blocks = Vec::new();
        let mut bytes = Vec::new();
        let mut push = |name: String, net: &Mlp| {
            let offset = bytes.len() / 4;
            for p in net.params() {
                bytes.extend_from_slice(&(*p as f32).to_le_bytes());
            }
            blocks.push(BlockInfo { name, sizes: net.sizes().to_vec(), offset, count: net.num_params() });
        };
        let mut normalizers = BTreeMap::new();
        if let Some(d) = &self.decoder {
            push("decoder".into(), d.net());
        }
        if let Some(v) = &self.vlb {
            push("vlb".into(), v.net());
            normalizers.insert("vlb".to_owned(), pair(v));
        }
        for (i, m) in self.ensemble.members().iter().enumerate() {
            push(format!("ensemble.{i}"), m.net());
        }
        normalizers.insert("ensemble".to_owned(), pair(&self.ensemble.members()[0]));
        let replay = match (&self.replay, with_replay) {
            (Some(r), true) => {
                fs::write(dir.join(REPLAY_FILE), serde_json::to_vec(r)?)?;
                Some(REPLAY_FILE.to_owned())
            }
            _ => None,
        };
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT,
            method: self.method,
            env: self.env.clone(),
            seed: self.seed,
            epoch: self.epoch,
            env_steps: self.env_steps,
            blocks,
            normalizers,
            replay,
        };
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::MissingCheckpoint(dir.to_path_buf()));
        }
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        if manifest.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        let bytes = fs::read(dir.join(PARAMS_FILE))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint("params.bin length is not a multiple of 4".into()));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let mut nets = BTreeMap::new();
        for b in &manifest.blocks {
            let end = b
                .offset
                .checked_add(b.count)
                .filter(|e| *e <= values.len())
                .ok_or_else(|| Error::Checkpoint(format!("block `{}` runs past the end of params.bin", b.name)))?;
            let net = Mlp::from_params(&b.sizes, values[b.offset..end].to_vec())
                .map_err(|e| Error::Checkpoint(format!("block `{}`: {e}", b.name)))?;
            nets.insert(b.name.clone(), net);
        }
        let norms = |key: &str| {
            manifest
                .normalizers
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}` normalizers")))
        };
        let latent = manifest.method == Method::Pma;
        let conditioner = if latent { Conditioner::Latent } else { Conditioner::Action };
        let model_from = |net: Mlp, n: &NormalizerPair| -> Result<GaussianDynamicsModel> {
            let sd = net.output_dim();
            let cd =
                net.input_dim().checked_sub(sd).ok_or_else(|| Error::Checkpoint("model block too narrow".into()))?;
            let mut m = GaussianDynamicsModel::from_parts(conditioner, sd, cd, net, DEFAULT_LR);
            m.set_normalizers(n.state.clone(), n.delta.clone());
            Ok(m)
        };
        let ens_norm = norms("ensemble")?;
        let mut members = Vec::new();
        while let Some(net) = nets.remove(&format!("ensemble.{}", members.len())) {
            members.push(model_from(net, &ens_norm)?);
        }
        let ensemble = EnsembleDynamics::from_members(members, &RngStream::new(manifest.seed, labels::MODEL_INIT))
            .map_err(|_| Error::Checkpoint("checkpoint has no ensemble members".into()))?;
        let (decoder, vlb) = if latent {
            let dec = nets.remove("decoder").ok_or_else(|| Error::Checkpoint("missing decoder block".into()))?;
            let vlb = nets.remove("vlb").ok_or_else(|| Error::Checkpoint("missing vlb block".into()))?;
            (Some(SquashedGaussianPolicy::from_net(dec, DEFAULT_LR)?), Some(model_from(vlb, &norms("vlb")?)?))
        } else {
            (None, None)
        };
        let replay = match &manifest.replay {
            Some(file) => Some(serde_json::from_slice(&fs::read(dir.join(file))?)?),
            None => None,
        };
        Ok(Self {
            method: manifest.method,
            env: manifest.env,
            seed: manifest.seed,
            epoch: manifest.epoch,
            env_steps: manifest.env_steps,
            decoder,
            vlb,
            ensemble,
            replay,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::PmaConfig;
    use crate::envs::Env;

    #[test]
    fn round_trip_preserves_predictions_to_f32_precision() {
        let env = Env::make("two_zone").unwrap();
        let cfg = PmaConfig { hidden: vec![8], ensemble_size: 2, steps_per_epoch: 20, ..Default::default() };
        let mut agent = PmaAgent::new(env.spec(), cfg, 4).unwrap();
        agent.collect(&env).unwrap();
        agent.train(env.real_steps()).unwrap();
        let art = Artifacts::from_pma(&agent, "two_zone", 4, env.real_steps());
        let dir = tempfile::tempdir().unwrap();
        art.save(dir.path(), true).unwrap();
        let back = Artifacts::load(dir.path()).unwrap();
        assert_eq!(back.epoch, 1);
        assert_eq!(back.replay.as_ref().unwrap().len(), agent.buffers.replay.len());
        let s = [0.05, -0.02, 0.1, 0.0];
        let z = [0.3, -0.7];
        let a = art.ensemble.predict_mean(&s, &z).unwrap();
        let b = back.ensemble.predict_mean(&s, &z).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5 * (1.0 + x.abs()));
        }
        assert_eq!(back.ensemble.normalizers().0, art.ensemble.normalizers().0);
        assert!(back.planning_model().is_ok());
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Artifacts::load(dir.path()), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn truncated_params_are_rejected() {
        let env = Env::make("trap_corridor").unwrap();
        let agent = crate::baselines::ClassicAgent::new(
            env.spec(),
            crate::baselines::Collector::Random,
            crate::baselines::ClassicConfig { hidden: vec![4], ensemble_size: 2, ..Default::default() },
            0,
        )
        .unwrap();
        let art = Artifacts::from_classic(&agent, Method::ClassicRandom, "trap_corridor", 0, 0);
        let dir = tempfile::tempdir().unwrap();
        art.save(dir.path(), false).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Artifacts::load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
