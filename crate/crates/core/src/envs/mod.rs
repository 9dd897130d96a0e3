//! Deterministic simulation environments.
//!
//! Four variants are provided:
//!
//! * `two_zone`: a planar point mass whose left half (`x < 0`) is an exact
//!   double integrator and whose right half folds the velocity through a
//!   multi-tooth tent map. The right half is deterministic but chaotic.
//! * `two_zone_left`: the same point mass with the chaotic half switched off,
//!   so the whole plane follows the left-half dynamics.
//! * `pendulum`: an inverted pendulum on an accelerating cart with early
//!   termination once the pole leans past 0.4 rad.
//! * `trap_corridor`: a 1-D corridor with an absorbing trap on the left.
//!
//! All dynamics are pure functions of `(s, a)`; the `rng` argument of
//! [`Env::step`] exists so that stochastic environments can share the API.

mod corridor;
mod pendulum;
mod point_mass;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use corridor::TrapCorridor;
pub use pendulum::CartPendulum;
pub use point_mass::TwoZonePointMass;

use crate::error::{Error, Result};
use crate::math::RngStream;

pub const DEFAULT_HORIZON: usize = 200;
pub const DT: f64 = 0.05;

pub const ENV_NAMES: [&str; 4] = ["two_zone", "two_zone_left", "pendulum", "trap_corridor"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub has_early_termination: bool,
    pub action_repeat: usize,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Latent action; `None` for classic (raw action) pipelines.
    pub z: Option<Vec<f64>>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True only on early termination, never on time-limit truncation.
    pub done: bool,
    pub mode: ActionMode,
}

#[derive(Debug, Clone)]
enum Dynamics {
    TwoZone(TwoZonePointMass),
    Pendulum(CartPendulum),
    Corridor(TrapCorridor),
}

/// A named environment with a shared real-step counter.
///
/// Clones share the counter, so every real transition taken through any clone
/// is visible to the audit in [`Env::real_steps`].
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    dynamics: Dynamics,
    steps: Arc<AtomicU64>,
}

impl Env {
    pub fn make(name: &str) -> Result<Self> {
        let (dynamics, state_dim, action_dim, early, tasks): (Dynamics, usize, usize, bool, &[&str]) = match name {
            "two_zone" => (Dynamics::TwoZone(TwoZonePointMass::default()), 4, 2, false, &point_mass::TASKS),
            "two_zone_left" => (Dynamics::TwoZone(TwoZonePointMass::left_only()), 4, 2, false, &point_mass::TASKS),
            "pendulum" => (Dynamics::Pendulum(CartPendulum::default()), 4, 1, true, &pendulum::TASKS),
            "trap_corridor" => (Dynamics::Corridor(TrapCorridor::default()), 1, 1, false, &corridor::TASKS),
            other => return Err(Error::UnknownEnv(other.to_owned())),
        };
        Ok(Self {
            spec: EnvSpec {
                name: name.to_owned(),
                state_dim,
                action_dim,
                horizon: DEFAULT_HORIZON,
                has_early_termination: early,
                action_repeat: 1,
                tasks: tasks.iter().map(|t| t.to_string()).collect(),
            },
            dynamics,
            steps: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.spec.horizon = horizon.max(1);
        self
    }

    pub fn with_action_repeat(mut self, repeat: usize) -> Self {
        self.spec.action_repeat = repeat.max(1);
        self
    }

    /// Disables early termination (pendulum only has it).
    pub fn without_early_termination(mut self) -> Self {
        self.spec.has_early_termination = false;
        self
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Number of real transitions taken through [`Env::step`] by this
    /// environment and all of its clones.
    pub fn real_steps(&self) -> u64 {
        self.steps.load(Ordering::SeqCst)
    }

    /// Gives this handle its own fresh counter.
    pub fn detached(&self) -> Self {
        Self { spec: self.spec.clone(), dynamics: self.dynamics.clone(), steps: Arc::new(AtomicU64::new(0)) }
    }

    pub fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::TwoZone(d) => d.reset(rng),
            Dynamics::Pendulum(d) => d.reset(rng),
            Dynamics::Corridor(d) => d.reset(rng),
        }
    }

    /// Real environment step; counted. Actions are clamped to `[-1, 1]`.
    pub fn step(&self, s: &[f64], a: &[f64], _rng: &mut RngStream) -> Result<(Vec<f64>, bool)> {
        let out = self.simulate(s, a)?;
        self.steps.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }

    /// The transition function without touching the step counter. Used by
    /// analytic planning models and tests.
    pub fn simulate(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, bool)> {
        if s.len() != self.spec.state_dim || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("invalid state {s:?} for {}", self.spec.name)));
        }
        if a.len() != self.spec.action_dim {
            return Err(Error::contract(format!("action has length {}, expected {}", a.len(), self.spec.action_dim)));
        }
        let a: Vec<f64> = a.iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }).collect();
        let mut state = s.to_vec();
        let mut done = false;
        for _ in 0..self.spec.action_repeat {
            state = match &self.dynamics {
                Dynamics::TwoZone(d) => d.next_state(&state, &a),
                Dynamics::Pendulum(d) => d.next_state(&state, &a),
                Dynamics::Corridor(d) => d.next_state(&state, &a),
            };
            done = self.terminated(&state);
            if done {
                break;
            }
        }
        Ok((state, done))
    }

    /// Early-termination predicate; always false when the environment has none.
    pub fn terminated(&self, s: &[f64]) -> bool {
        if !self.spec.has_early_termination {
            return false;
        }
        match &self.dynamics {
            Dynamics::Pendulum(d) => d.fallen(s),
            _ => false,
        }
    }

    pub fn check_task(&self, task: &str) -> Result<()> {
        if self.spec.tasks.iter().any(|t| t == task) {
            Ok(())
        } else {
            Err(Error::UnknownTask { task: task.to_owned(), available: self.spec.tasks.clone() })
        }
    }

    /// Task reward for `(s, a, s')`. The built-in tasks only read `s'` (and
    /// add a survival bonus of 1 in environments with early termination).
    pub fn task_reward(&self, task: &str, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
        self.check_task(task)?;
        Ok(self.reward_unchecked(task, s, a, s_next))
    }

    pub(crate) fn reward_unchecked(&self, task: &str, _s: &[f64], _a: &[f64], s_next: &[f64]) -> f64 {
        let base = match &self.dynamics {
            Dynamics::TwoZone(_) => point_mass::reward(task, s_next),
            Dynamics::Pendulum(_) => pendulum::reward(task, s_next),
            Dynamics::Corridor(d) => d.reward(task, s_next),
        };
        if self.spec.has_early_termination {
            base + 1.0
        } else {
            base
        }
    }

    /// Policy input for a state. None of the built-in tasks is translation
    /// invariant, so the full state is observed.
    pub fn observation<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(Env::make("hopper"), Err(Error::UnknownEnv(_))));
        let env = Env::make("two_zone").unwrap();
        match env.task_reward("jump", &[0.0; 4], &[0.0; 2], &[0.0; 4]) {
            Err(Error::UnknownTask { available, .. }) => assert!(available.contains(&"east".to_string())),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reset_is_deterministic() {
        for name in ENV_NAMES {
            let env = Env::make(name).unwrap();
            let a = env.reset(&mut RngStream::new(3, "env"));
            let b = env.reset(&mut RngStream::new(3, "env"));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn step_counter_is_shared_by_clones_only() {
        let env = Env::make("trap_corridor").unwrap();
        let clone = env.clone();
        let detached = env.detached();
        let mut rng = RngStream::new(0, "env");
        clone.step(&[0.0], &[0.5], &mut rng).unwrap();
        env.simulate(&[0.0], &[0.5]).unwrap();
        assert_eq!(env.real_steps(), 1);
        assert_eq!(detached.real_steps(), 0);
    }

    #[test]
    fn non_finite_state_is_a_contract_violation() {
        let env = Env::make("pendulum").unwrap();
        assert!(matches!(env.simulate(&[f64::NAN, 0.0, 0.0, 0.0], &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn actions_are_clamped() {
        let env = Env::make("trap_corridor").unwrap();
        let (a, _) = env.simulate(&[0.0], &[5.0]).unwrap();
        let (b, _) = env.simulate(&[0.0], &[1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn action_repeat_composes_steps() {
        let env = Env::make("two_zone_left").unwrap();
        let rep = env.clone().with_action_repeat(3);
        let s = vec![-1.0, 0.2, 0.1, -0.3];
        let mut x = s.clone();
        for _ in 0..3 {
            x = env.simulate(&x, &[0.4, -0.2]).unwrap().0;
        }
        assert_eq!(rep.simulate(&s, &[0.4, -0.2]).unwrap().0, x);
    }
}
