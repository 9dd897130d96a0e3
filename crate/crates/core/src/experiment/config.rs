use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::PmaConfig;
use crate::baselines::{ClassicConfig, Collector};
use crate::envs::{Env, ENV_NAMES};
use crate::error::{Error, Result};
use crate::planners::{MbpoConfig, MppiConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PROBE_EVERY: usize = 10;
pub const DESK_EPOCHS: usize = 200;
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 1.0, 5.0, 20.0, 50.0];

/// Pretraining method: the latent-action agent or a classic collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pma,
    ClassicRandom,
    ClassicDisagreement,
    ClassicRnd,
    ClassicPmaData,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Pma, Method::ClassicRandom, Method::ClassicDisagreement, Method::ClassicRnd, Method::ClassicPmaData];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pma => "pma",
            Method::ClassicRandom => "classic_random",
            Method::ClassicDisagreement => "classic_disagreement",
            Method::ClassicRnd => "classic_rnd",
            Method::ClassicPmaData => "classic_pma_data",
        }
    }

    pub fn collector(&self) -> Option<Collector> {
        match self {
            Method::Pma => None,
            Method::ClassicRandom => Some(Collector::Random),
            Method::ClassicDisagreement => Some(Collector::Disagreement),
            Method::ClassicRnd => Some(Collector::Rnd),
            Method::ClassicPmaData => Some(Collector::PmaData),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }
}

/// Downstream planner used in evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Mppi,
    Mbpo,
    SacFull,
}

impl Planner {
    pub const ALL: [Planner; 3] = [Planner::Mppi, Planner::Mbpo, Planner::SacFull];

    pub fn as_str(&self) -> &'static str {
        match self {
            Planner::Mppi => "mppi",
            Planner::Mbpo => "mbpo",
            Planner::SacFull => "sac_full",
        }
    }
}

impl fmt::Display for Planner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Planner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Planner::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config("planner", format!("unknown planner `{s}` (expected mppi, mbpo or sac_full)")))
    }
}

/// Periodic zero-shot planning probes during pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// 0 disables probing.
    pub every: usize,
    pub tasks: Vec<String>,
    pub lambda: f64,
    pub mppi: MppiConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { every: DEFAULT_PROBE_EVERY, tasks: Vec::new(), lambda: 0.0, mppi: MppiConfig::default() }
    }
}

/// Defaults for the zero-shot phase; the CLI may override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub mppi: MppiConfig,
    pub mbpo: MbpoConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            mppi: MppiConfig::default(),
            mbpo: MbpoConfig::default(),
        }
    }
}

/// A full pretraining experiment: one run per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: String,
    /// Episode length override.
    #[serde(default)]
    pub horizon: Option<usize>,
    pub method: Method,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Epochs between intermediate checkpoints; 0 keeps only the initial
    /// and final ones.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub pma: PmaConfig,
    #[serde(default)]
    pub classic: ClassicConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory of finished `pma` runs whose replay buffers feed
    /// `classic_pma_data`; the run for seed `k` is looked up by seed.
    #[serde(default)]
    pub pma_data_source: Option<PathBuf>,
}

fn default_checkpoint_every() -> usize {
    10
}

impl ExperimentConfig {
    pub fn new(env: &str, method: Method, epochs: usize, seeds: Vec<u64>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            env: env.to_owned(),
            horizon: None,
            method,
            epochs,
            seeds,
            out_dir: out_dir.into(),
            checkpoint_every: default_checkpoint_every(),
            pma: PmaConfig::default(),
            classic: ClassicConfig::default(),
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
            pma_data_source: None,
        }
    }

    /// Small-network preset that finishes a 200-epoch run in about a minute
    /// on one core: 100-step episodes, width-32 networks, more and faster
    /// model updates per epoch, a cheaper MPPI for evaluation and no probes.
    pub fn desk(env: &str, method: Method, seeds: Vec<u64>, out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::new(env, method, DESK_EPOCHS, seeds, out_dir);
        c.horizon = Some(100);
        c.checkpoint_every = 50;
        c.pma.hidden = vec![32, 32];
        c.pma.model_batch_size = 128;
        c.pma.model_steps = 128;
        c.pma.model_lr = 1e-3;
        c.pma.sac.batch_size = 128;
        c.pma.intrinsic.samples = 32;
        c.classic.hidden = vec![32, 32];
        c.classic.model_batch_size = 128;
        c.classic.model_steps = 128;
        c.classic.model_lr = 1e-3;
        c.classic.sac.batch_size = 128;
        c.probe.every = 0;
        c.eval.mppi = MppiConfig { horizon: 10, population: 64, iterations: 3, ..MppiConfig::default() };
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { path: p, msg } => Error::config(format!("{}: {p}", path.display()), msg),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn make_env(&self) -> Result<Env> {
        let env = Env::make(&self.env)?;
        Ok(match self.horizon {
            Some(h) => env.with_horizon(h),
            None => env,
        })
    }

    /// Environment steps one run spends on pretraining.
    pub fn budget_steps(&self) -> u64 {
        let per_epoch = match self.method {
            Method::Pma => self.pma.steps_per_epoch,
            _ => self.classic.steps_per_epoch,
        };
        (per_epoch * self.epochs) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(Error::UnknownEnv(self.env.clone()));
        }
        if self.horizon == Some(0) {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        match self.method {
            Method::Pma => self.pma.validate("pma")?,
            _ => self.classic.validate("classic")?,
        }
        if self.method == Method::ClassicPmaData && self.pma_data_source.is_none() {
            return Err(Error::config("pma_data_source", "classic_pma_data needs the directory of finished pma runs"));
        }
        let env = self.make_env()?;
        for task in &self.probe.tasks {
            env.check_task(task)?;
        }
        self.probe.mppi.validate("probe.mppi")?;
        if !(self.probe.lambda >= 0.0) {
            return Err(Error::config("probe.lambda", "must be >= 0"));
        }
        if self.eval.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("eval.lambdas", "penalty coefficients must be >= 0"));
        }
        self.eval.mppi.validate("eval.mppi")?;
        self.eval.mbpo.validate("eval.mbpo")
    }

    /// Directory of the run for `seed`.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}-{}-seed{seed}", self.method, self.env))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
