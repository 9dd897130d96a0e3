//! Frozen models that planners can roll forward, plus virtual rollouts.

use ndarray::{Array2, ArrayView2};

use crate::agents::{decoder_input, PmaAgent, SquashedGaussianPolicy};
use crate::dynamics::{Conditioner, EnsembleDynamics};
use crate::envs::{ActionMode, Env};
use crate::error::{Error, Result};
use crate::math::RngStream;

/// A frozen one-step model over some control space (latent or raw actions).
pub trait PlanningModel: Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Next states and per-row uncertainty penalties (`<= 0`) for a batch.
    fn predict(
        &self,
        states: ArrayView2<f64>,
        controls: ArrayView2<f64>,
        lambda: f64,
    ) -> Result<(Array2<f64>, Vec<f64>)>;

    /// Raw environment action that realizes `control` at `s`.
    fn env_action(&self, s: &[f64], control: &[f64]) -> Result<Vec<f64>>;
}

fn ensemble_predict(
    ensemble: &EnsembleDynamics,
    states: ArrayView2<f64>,
    controls: ArrayView2<f64>,
    lambda: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("penalty coefficient must be >= 0, got {lambda}")));
    }
    let pred = ensemble.predict(states, controls)?;
    let penalty = if lambda == 0.0 || ensemble.len() < 2 { vec![0.0; states.nrows()] } else { pred.penalty(lambda) };
    Ok((pred.mean_next, penalty))
}

/// Latent ensemble plus action decoder; controls are latent actions decoded
/// deterministically for execution.
pub struct LatentModel<'a> {
    pub decoder: &'a SquashedGaussianPolicy,
    pub ensemble: &'a EnsembleDynamics,
}

impl<'a> LatentModel<'a> {
    pub fn new(decoder: &'a SquashedGaussianPolicy, ensemble: &'a EnsembleDynamics) -> Result<Self> {
        if ensemble.conditioner() != Conditioner::Latent {
            return Err(Error::contract("latent planning needs a latent-conditioned ensemble"));
        }
        if decoder.input_dim() != ensemble.state_dim() + ensemble.cond_dim() {
            return Err(Error::contract("decoder input does not match state and latent sizes"));
        }
        Ok(Self { decoder, ensemble })
    }

    pub fn of(agent: &'a PmaAgent) -> Self {
        Self { decoder: &agent.decoder.policy, ensemble: &agent.ensemble }
    }
}

impl PlanningModel for LatentModel<'_> {
    fn state_dim(&self) -> usize {
        self.ensemble.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.ensemble.cond_dim()
    }

    fn predict(
        &self,
        states: ArrayView2<f64>,
        controls: ArrayView2<f64>,
        lambda: f64,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        ensemble_predict(self.ensemble, states, controls, lambda)
    }

    fn env_action(&self, s: &[f64], control: &[f64]) -> Result<Vec<f64>> {
        let mut unused = RngStream::new(0, "unused");
        self.decoder.act(&decoder_input(s, control), ActionMode::Deterministic, &mut unused)
    }
}

/// Action-conditioned ensemble; controls are raw actions.
pub struct ClassicModel<'a> {
    pub ensemble: &'a EnsembleDynamics,
}

impl<'a> ClassicModel<'a> {
    pub fn new(ensemble: &'a EnsembleDynamics) -> Result<Self> {
        if ensemble.conditioner() != Conditioner::Action {
            return Err(Error::contract("classic planning needs an action-conditioned ensemble"));
        }
        Ok(Self { ensemble })
    }
}

impl PlanningModel for ClassicModel<'_> {
    fn state_dim(&self) -> usize {
        self.ensemble.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.ensemble.cond_dim()
    }

    fn predict(
        &self,
        states: ArrayView2<f64>,
        controls: ArrayView2<f64>,
        lambda: f64,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        ensemble_predict(self.ensemble, states, controls, lambda)
    }

    fn env_action(&self, _s: &[f64], control: &[f64]) -> Result<Vec<f64>> {
        Ok(control.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }
}

/// The environment's own transition function, without step counting.
pub struct ExactModel<'a> {
    pub env: &'a Env,
}

impl PlanningModel for ExactModel<'_> {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn predict(
        &self,
        states: ArrayView2<f64>,
        controls: ArrayView2<f64>,
        _lambda: f64,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let mut next = Array2::zeros(states.raw_dim());
        for (i, (s, c)) in states.outer_iter().zip(controls.outer_iter()).enumerate() {
            let (n, _) = self.env.simulate(&s.to_vec(), &c.to_vec())?;
            next.row_mut(i).iter_mut().zip(&n).for_each(|(d, v)| *d = *v);
        }
        Ok((next, vec![0.0; states.nrows()]))
    }

    fn env_action(&self, _s: &[f64], control: &[f64]) -> Result<Vec<f64>> {
        Ok(control.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }
}

/// States and rewards of one virtual rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Predicted states after each executed control.
    pub states: Vec<Vec<f64>>,
    /// Task reward plus penalty for each executed control.
    pub rewards: Vec<f64>,
    /// True when the rollout stopped on predicted termination.
    pub terminated: bool,
}

/// Rolls `controls` (one row per step) through the model from `s0`.
/// Stops early on predicted termination.
pub fn model_rollout(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    lambda: f64,
    s0: &[f64],
    controls: ArrayView2<f64>,
) -> Result<Rollout> {
    env.check_task(task)?;
    let mut s = s0.to_vec();
    let mut out = Rollout { states: Vec::new(), rewards: Vec::new(), terminated: false };
    for (t, c) in controls.outer_iter().enumerate() {
        let c = c.to_vec();
        let sv = ArrayView2::from_shape((1, s.len()), &s[..]).map_err(|e| Error::contract(e.to_string()))?;
        let cv = ArrayView2::from_shape((1, c.len()), &c[..]).map_err(|e| Error::contract(e.to_string()))?;
        let (next, pen) = model.predict(sv, cv, lambda)?;
        let next = next.row(0).to_vec();
        if next.iter().any(|v| !v.is_finite()) || !pen[0].is_finite() {
            return Err(Error::NonFinitePrediction { step: t });
        }
        out.rewards.push(env.reward_unchecked(task, &s, &c, &next) + pen[0]);
        let done = env.terminated(&next);
        out.states.push(next.clone());
        s = next;
        if done {
            out.terminated = true;
            break;
        }
    }
    Ok(out)
}

/// Penalized returns of many control sequences from the same start state.
/// `sequences` has shape `(n, horizon * control_dim)`, row-major in time.
pub fn batch_returns(
    model: &dyn PlanningModel,
    env: &Env,
    task: &str,
    lambda: f64,
    s0: &[f64],
    sequences: &Array2<f64>,
    horizon: usize,
) -> Result<Vec<f64>> {
    let n = sequences.nrows();
    let cd = model.control_dim();
    let sd = model.state_dim();
    let mut states = Array2::from_shape_fn((n, sd), |(_, j)| s0[j]);
    let mut alive = vec![true; n];
    let mut returns = vec![0.0; n];
    for t in 0..horizon {
        let controls = sequences.slice(ndarray::s![.., t * cd..(t + 1) * cd]);
        let (next, pen) = model.predict(states.view(), controls, lambda)?;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let row = next.row(i);
            let row = row.as_slice().expect("standard layout");
            if row.iter().any(|v| !v.is_finite()) || !pen[i].is_finite() {
                return Err(Error::NonFinitePrediction { step: t });
            }
            let prev = states.row(i).to_vec();
            let c = controls.row(i).to_vec();
            returns[i] += env.reward_unchecked(task, &prev, &c, row) + pen[i];
            if env.terminated(row) {
                alive[i] = false;
            }
        }
        states = next;
    }
    Ok(returns)
}
