//! Pretraining runs: one directory per seed holding the config snapshot,
//! per-epoch metrics, probe results and checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Artifacts;
use super::config::{ExperimentConfig, Method};
use crate::agents::{pma_epoch, PmaAgent};
use crate::baselines::{ClassicAgent, Collector};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::math::rng::labels;
use crate::math::RngStream;
use crate::planners::{mppi_plan, ClassicModel, LatentModel, PlanningModel};

/// SHA-256 over the crate sources, fixed at build time.
pub const CODE_HASH: &str = env!("PMA_LAB_CODE_HASH");
pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PROBES_FILE: &str = "probes.jsonl";
pub const THREADS_VAR: &str = "PMA_LAB_THREADS";

/// Everything needed to reconstruct a finished run from its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub config_hash: String,
    pub code_hash: String,
    pub method: Method,
    pub env: String,
    pub seed: u64,
    pub epochs_completed: usize,
    /// Environment steps spent on pretraining (for `classic_pma_data`, the
    /// steps of the run that collected its data).
    pub env_steps: u64,
    /// Real steps taken by periodic probes; not part of the budget.
    pub probe_env_steps: u64,
    pub metrics_file: Option<String>,
    pub probes_file: Option<String>,
    /// Checkpoint directories relative to the run directory, oldest first.
    pub checkpoints: Vec<String>,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_FILE);
        if !path.is_file() {
            return Err(Error::MissingCheckpoint(run_dir.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn final_checkpoint(&self, run_dir: &Path) -> Result<PathBuf> {
        self.checkpoints.last().map(|c| run_dir.join(c)).ok_or_else(|| Error::MissingCheckpoint(run_dir.to_path_buf()))
    }
}

/// One zero-shot probe taken during pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub epoch: usize,
    pub task: String,
    pub lambda: f64,
    pub predicted_return: f64,
    pub true_return: f64,
    pub steps: usize,
}

/// Worker pool sized by `PMA_LAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::config(THREADS_VAR, format!("expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::config(THREADS_VAR, e.to_string()))
}

/// Runs every seed of `cfg`, in parallel across seeds.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let pool = thread_pool()?;
    pool.install(|| cfg.seeds.par_iter().map(|&seed| pretrain_seed(cfg, seed).map(|_| cfg.run_dir(seed))).collect())
}

enum Trainer {
    Pma(Box<PmaAgent>),
    Classic(Box<ClassicAgent>),
}

impl Trainer {
    fn planning_model(&self) -> Result<Box<dyn PlanningModel + '_>> {
        Ok(match self {
            Trainer::Pma(a) => Box::new(LatentModel::of(a)),
            Trainer::Classic(a) => Box::new(ClassicModel::new(&a.ensemble)?),
        })
    }

    fn artifacts(&self, cfg: &ExperimentConfig, seed: u64, steps: u64) -> Artifacts {
        match self {
            Trainer::Pma(a) => Artifacts::from_pma(a, &cfg.env, seed, steps),
            Trainer::Classic(a) => Artifacts::from_classic(a, cfg.method, &cfg.env, seed, steps),
        }
    }
}

/// Loads the replay buffer of the finished `pma` run for `seed`.
fn pma_source(cfg: &ExperimentConfig, seed: u64) -> Result<(crate::agents::ReplayBuffer, u64)> {
    let root = cfg.pma_data_source.as_ref().ok_or_else(|| Error::config("pma_data_source", "not set"))?;
    let dir = root.join(format!("{}-{}-seed{seed}", Method::Pma, cfg.env));
    let record = RunRecord::load(&dir)?;
    let art = Artifacts::load(&record.final_checkpoint(&dir)?)?;
    let replay = art
        .replay
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::config("pma_data_source", format!("{} has no replay buffer", dir.display())))?;
    Ok((replay, record.env_steps))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, row: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, row)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Runs one seed and writes its directory.
pub fn pretrain_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let dir = cfg.run_dir(seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_json()?)?;
    let env = cfg.make_env()?;
    let probe_env = env.detached();

    let mut source_steps = None;
    let mut trainer = match cfg.method.collector() {
        None => Trainer::Pma(Box::new(PmaAgent::new(env.spec(), cfg.pma.clone(), seed)?)),
        Some(Collector::PmaData) => {
            let (replay, steps) = pma_source(cfg, seed)?;
            let mut agent = ClassicAgent::new(env.spec(), Collector::PmaData, cfg.classic.clone(), seed)?;
            for t in replay.as_slice() {
                agent.replay.push(t.clone());
            }
            source_steps = Some(steps);
            Trainer::Classic(Box::new(agent))
        }
        Some(c) => Trainer::Classic(Box::new(ClassicAgent::new(env.spec(), c, cfg.classic.clone(), seed)?)),
    };
    let budget = |env: &Env| source_steps.unwrap_or_else(|| env.real_steps());

    let mut record = RunRecord {
        config_hash: cfg.hash()?,
        code_hash: CODE_HASH.to_owned(),
        method: cfg.method,
        env: cfg.env.clone(),
        seed,
        epochs_completed: 0,
        env_steps: 0,
        probe_env_steps: 0,
        metrics_file: None,
        probes_file: None,
        checkpoints: Vec::new(),
    };
    let save = |trainer: &Trainer, epoch: usize, steps: u64, last: bool, record: &mut RunRecord| -> Result<()> {
        let name = format!("checkpoints/epoch-{epoch:04}");
        trainer.artifacts(cfg, seed, steps).save(&dir.join(&name), last)?;
        record.checkpoints.push(name);
        Ok(())
    };
    save(&trainer, 0, budget(&env), cfg.epochs == 0, &mut record)?;

    let probing = cfg.probe.every > 0 && !cfg.probe.tasks.is_empty();
    let mut metrics = None;
    let mut probes = None;
    if cfg.epochs > 0 {
        metrics = Some(BufWriter::new(File::create(dir.join(METRICS_FILE))?));
        record.metrics_file = Some(METRICS_FILE.to_owned());
        if probing && cfg.epochs >= cfg.probe.every {
            probes = Some(BufWriter::new(File::create(dir.join(PROBES_FILE))?));
            record.probes_file = Some(PROBES_FILE.to_owned());
        }
    }
    let all_fresh: Option<Vec<_>> = (cfg.method == Method::ClassicPmaData).then(|| match &trainer {
        Trainer::Classic(a) => a.replay.as_slice().to_vec(),
        Trainer::Pma(_) => Vec::new(),
    });

    for epoch in 1..=cfg.epochs {
        let row = match &mut trainer {
            Trainer::Pma(agent) => serde_json::to_value(pma_epoch(agent, &env)?)?,
            Trainer::Classic(agent) => {
                let m = match &all_fresh {
                    // a fixed dataset: normalizers see it once, fitting uses it every epoch
                    Some(data) => agent.train(if epoch == 1 { data } else { &[] }, budget(&env))?,
                    None => {
                        let fresh = agent.collect(&env)?;
                        agent.train(&fresh, env.real_steps())?
                    }
                };
                serde_json::to_value(m)?
            }
        };
        if let Some(w) = metrics.as_mut() {
            write_json_line(w, &row)?;
        }
        if let Some(w) = probes.as_mut().filter(|_| epoch % cfg.probe.every == 0) {
            let model = trainer.planning_model()?;
            for task in &cfg.probe.tasks {
                let mut rng = RngStream::new(seed, labels::PROBE).substream(&format!("epoch-{epoch}/{task}"));
                let out = mppi_plan(model.as_ref(), &probe_env, task, &cfg.probe.mppi, cfg.probe.lambda, &mut rng)?;
                write_json_line(
                    w,
                    &ProbeRow {
                        epoch,
                        task: task.clone(),
                        lambda: cfg.probe.lambda,
                        predicted_return: out.predicted_return,
                        true_return: out.true_return,
                        steps: out.steps,
                    },
                )?;
            }
        }
        let last = epoch == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            save(&trainer, epoch, budget(&env), last, &mut record)?;
        }
        record.epochs_completed = epoch;
    }
    for w in [metrics.as_mut(), probes.as_mut()].into_iter().flatten() {
        w.flush()?;
    }
    record.env_steps = budget(&env);
    record.probe_env_steps = probe_env.real_steps();
    if record.env_steps != cfg.budget_steps() && cfg.method != Method::ClassicPmaData {
        return Err(Error::Audit(format!(
            "run used {} environment steps, budget is {}",
            record.env_steps,
            cfg.budget_steps()
        )));
    }
    fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}
