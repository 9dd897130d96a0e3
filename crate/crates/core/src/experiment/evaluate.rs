//! Zero-shot evaluation of a finished run with an audited step counter.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Artifacts;
use super::config::{ExperimentConfig, Method, Planner};
use super::run::{RunRecord, CONFIG_FILE};
use crate::agents::uniform_latent;
use crate::envs::{ActionMode, Env, Transition};
use crate::error::{Error, Result};
use crate::math::rng::labels;
use crate::math::RngStream;
use crate::planners::{mbpo_zero_shot, mppi_plan, EpisodeOutcome, MbpoConfig, PlanningModel};

pub const EVAL_DIR: &str = "eval";

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRow {
    pub method: Method,
    pub env: String,
    pub run_seed: u64,
    pub seed: u64,
    pub task: String,
    pub planner: Planner,
    pub lambda: f64,
    pub predicted_return: f64,
    pub true_return: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub planner: Planner,
    pub task: String,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    /// Real environment steps taken during evaluation.
    pub env_steps: u64,
    pub file: PathBuf,
}

/// Runs one episode of `planner` against the frozen model.
pub fn run_episode(
    planner: Planner,
    model: &dyn PlanningModel,
    env: &Env,
    frozen: &[Transition],
    task: &str,
    lambda: f64,
    cfg: &ExperimentConfig,
    rng: &mut RngStream,
) -> Result<EpisodeOutcome> {
    match planner {
        Planner::Mppi => mppi_plan(model, env, task, &cfg.eval.mppi, lambda, rng),
        Planner::Mbpo | Planner::SacFull => {
            let mut mbpo = MbpoConfig { lambda, ..cfg.eval.mbpo.clone() };
            if planner == Planner::SacFull {
                mbpo = mbpo.sac_full(env.horizon());
            }
            Ok(mbpo_zero_shot(model, env, frozen, task, &mbpo, rng)?.1)
        }
    }
}

/// Evaluates the final checkpoint of `run_dir` and writes
/// `eval/<planner>-<task>.jsonl`. Fails with an audit error if the
/// environment was stepped more often than the evaluation episodes account
/// for.
pub fn evaluate_run(run_dir: &Path, req: &EvalRequest) -> Result<EvalOutcome> {
    let record = RunRecord::load(run_dir)?;
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let env = cfg.make_env()?;
    env.check_task(&req.task)?;
    if req.seeds.is_empty() || req.lambdas.is_empty() {
        return Err(Error::config("evaluate", "need at least one seed and one penalty coefficient"));
    }
    if let Some(bad) = req.lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::config("evaluate.lambda", format!("penalty coefficients must be >= 0, got {bad}")));
    }
    let art = Artifacts::load(&record.final_checkpoint(run_dir)?)?;
    let model = art.planning_model()?;
    let frozen = art.replay.as_ref().map(|r| r.as_slice()).unwrap_or(&[]);

    let before = env.real_steps();
    let mut rows = Vec::with_capacity(req.seeds.len() * req.lambdas.len());
    for &seed in &req.seeds {
        for &lambda in &req.lambdas {
            // identical start states across penalty coefficients
            let mut rng = RngStream::new(seed, labels::EVAL).substream(&format!("{}/{}", req.planner, req.task));
            let out = run_episode(req.planner, model.as_ref(), &env, frozen, &req.task, lambda, &cfg, &mut rng)?;
            rows.push(EvalRow {
                method: record.method,
                env: record.env.clone(),
                run_seed: record.seed,
                seed,
                task: req.task.clone(),
                planner: req.planner,
                lambda,
                predicted_return: out.predicted_return,
                true_return: out.true_return,
                steps: out.steps,
            });
        }
    }
    let env_steps = env.real_steps() - before;
    let declared: u64 = rows.iter().map(|r| r.steps as u64).sum();
    if env_steps != declared {
        return Err(Error::Audit(format!(
            "evaluation took {env_steps} environment steps but its episodes account for {declared}"
        )));
    }

    let out_dir = run_dir.join(EVAL_DIR);
    fs::create_dir_all(&out_dir)?;
    let file = out_dir.join(format!("{}-{}.jsonl", req.planner, req.task));
    let mut w = BufWriter::new(File::create(&file)?);
    for row in &rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(EvalOutcome { rows, env_steps, file })
}

/// All evaluation rows stored under `run_dir`, in file-name order.
pub fn load_eval_rows(run_dir: &Path) -> Result<Vec<EvalRow>> {
    let dir = run_dir.join(EVAL_DIR);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        for line in BufReader::new(File::open(&f)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
    }
    Ok(rows)
}

/// Fresh transitions from the run's own exploration behaviour, collected on
/// a detached environment: deterministic decoding of uniform latents for
/// latent-action runs, uniform random actions otherwise.
pub fn held_out_transitions(art: &Artifacts, env: &Env, count: usize, rng: &mut RngStream) -> Result<Vec<Transition>> {
    let env = env.detached();
    let mut env_rng = rng.substream("env");
    let mut out = Vec::with_capacity(count);
    let mut s = env.reset(&mut env_rng);
    let mut t = 0;
    while out.len() < count {
        let (z, a) = match &art.decoder {
            Some(dec) => {
                let z = uniform_latent(art.ensemble.cond_dim(), rng);
                let mut input = s.clone();
                input.extend_from_slice(&z);
                let a = dec.act(&input, ActionMode::Deterministic, rng)?;
                (Some(z), a)
            }
            None => (None, rng.uniform_box(env.action_dim())),
        };
        let (s_next, done) = env.step(&s, &a, &mut env_rng)?;
        t += 1;
        out.push(Transition {
            s: s.clone(),
            z,
            a,
            r: 0.0,
            s_next: s_next.clone(),
            done,
            mode: ActionMode::Deterministic,
        });
        if done || t >= env.horizon() {
            s = env.reset(&mut env_rng);
            t = 0;
        } else {
            s = s_next;
        }
    }
    Ok(out)
}

/// One-step ensemble-mean squared error on held-out transitions from the
/// run's own exploration behaviour.
pub fn held_out_model_error(art: &Artifacts, env: &Env, count: usize, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, labels::EVAL).substream("held-out");
    let data = held_out_transitions(art, env, count, &mut rng)?;
    art.ensemble.one_step_mse(&data)
}
