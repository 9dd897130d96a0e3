use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::model::{batch_returns, PlanningModel};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::math::stats::logsumexp_nonempty;
use crate::math::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiConfig {
    pub horizon: usize,
    pub population: usize,
    pub iterations: usize,
    /// Inverse temperature applied to returns in the weights.
    pub temperature: f64,
    /// Standard deviation of the isotropic sampling noise.
    pub noise_std: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self { horizon: 15, population: 256, iterations: 10, temperature: 1.0, noise_std: 1.0 }
    }
}

impl MppiConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config(format!("{path}.horizon"), "must be >= 1"));
        }
        if self.population == 0 {
            return Err(Error::config(format!("{path}.population"), "must be >= 1"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::config(format!("{path}.temperature"), "must be >= 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config(format!("{path}.noise_std"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Return-weighted average of sampled sequences with weights
/// `softmax(alpha * R)`. Rows of `samples` are flattened sequences.
pub fn mppi_update(mean: &[f64], samples: ArrayView2<f64>, returns: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let n = samples.nrows();
    if n == 0 || returns.len() != n {
        return Err(Error::contract(format!(
            "mppi update needs matching samples ({n}) and returns ({})",
            returns.len()
        )));
    }
    if samples.ncols() != mean.len() {
        return Err(Error::contract("sample width differs from the mean sequence"));
    }
    let logits: Vec<f64> = returns.iter().map(|r| alpha * r).collect();
    let lse = logsumexp_nonempty(&logits);
    let mut out = vec![0.0; mean.len()];
    for (row, l) in samples.outer_iter().zip(&logits) {
        let w = (l - lse).exp();
        if w == 0.0 {
            continue;
        }
        out.iter_mut().zip(row.iter()).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// Outcome of one evaluation episode in the real environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub true_return: f64,
    /// Sum over executed steps of the task reward the model predicted for
    /// the chosen control, without penalty.
    pub predicted_return: f64,
    pub steps: usize,
}

/// Refines the mean control sequence in place with `cfg.iterations` rounds.
pub fn mppi_refine(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    cfg: &MppiConfig,
    lambda: f64,
    s: &[f64],
    mean: &mut Vec<f64>,
    rng: &mut RngStream,
) -> Result<()> {
    let width = mean.len();
    for _ in 0..cfg.iterations {
        let samples = Array2::from_shape_fn((cfg.population, width), |(_, k)| mean[k] + cfg.noise_std * rng.normal());
        // the model only sees the valid box; the mean may leave it so that
        // saturated controls are reachable
        let clipped = samples.mapv(|v| v.clamp(-1.0, 1.0));
        let returns = batch_returns(model, env, task, lambda, s, &clipped, cfg.horizon)?;
        *mean = mppi_update(mean, samples.view(), &returns, cfg.temperature)?;
    }
    Ok(())
}

/// One receding-horizon episode: plan, execute the first control, shift.
pub fn mppi_plan(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    cfg: &MppiConfig,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<EpisodeOutcome> {
    cfg.validate("mppi")?;
    env.check_task(task)?;
    let cd = model.control_dim();
    let mut reset_rng = rng.substream("reset");
    let mut s = env.reset(&mut reset_rng);
    let mut mean = vec![0.0; cfg.horizon * cd];
    let mut out = EpisodeOutcome { true_return: 0.0, predicted_return: 0.0, steps: 0 };
    for _ in 0..env.horizon() {
        mppi_refine(model, env, task, cfg, lambda, &s, &mut mean, rng)?;
        let control: Vec<f64> = mean[..cd].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let a = model.env_action(&s, &control)?;
        let sv = ArrayView2::from_shape((1, s.len()), &s[..]).map_err(|e| Error::contract(e.to_string()))?;
        let cv = ArrayView2::from_shape((1, cd), &control[..]).map_err(|e| Error::contract(e.to_string()))?;
        let (pred, _) = model.predict(sv, cv, 0.0)?;
        let pred = pred.row(0).to_vec();
        out.predicted_return += env.reward_unchecked(task, &s, &control, &pred);
        let (s_next, done) = env.step(&s, &a, rng)?;
        out.true_return += env.reward_unchecked(task, &s, &a, &s_next);
        out.steps += 1;
        mean.rotate_left(cd);
        let n = mean.len();
        mean[n - cd..].iter_mut().for_each(|v| *v = 0.0);
        s = s_next;
        if done {
            break;
        }
    }
    Ok(out)
}
