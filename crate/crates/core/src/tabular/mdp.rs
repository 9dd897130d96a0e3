use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// A tabular policy: one distribution over actions per state.
pub type Policy = Vec<Vec<f64>>;

pub(crate) fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
        return Err(Error::contract(format!("{what} is not a probability vector: {v:?}")));
    }
    Ok(())
}

/// Finite discounted MDP with transition tensor `p[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `[s][a][s']`.
    transitions: Vec<f64>,
    /// Flat `[s][a]`.
    rewards: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
}

/// Discounted visitation of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub states: Vec<f64>,
    /// `d(s, a) = pi(a|s) d(s)`.
    pub state_actions: Vec<Vec<f64>>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::contract("an MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states || rewards.len() != n_states * n_actions {
            return Err(Error::contract("transition or reward table has the wrong size"));
        }
        if initial.len() != n_states {
            return Err(Error::contract("initial distribution has the wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::contract(format!("discount must lie in [0, 1), got {gamma}")));
        }
        check_distribution(&initial, "initial distribution")?;
        let mdp = Self { n_states, n_actions, transitions, rewards, initial, gamma };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(mdp.p(s, a), &format!("p(.|{s},{a})"))?;
            }
        }
        if mdp.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::contract("rewards must be finite"));
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn p(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// `R = max |r(s, a)|`.
    pub fn reward_bound(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same rewards, initial distribution and discount; new dynamics.
    pub fn with_transitions(&self, transitions: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, transitions, self.rewards.clone(), self.initial.clone(), self.gamma)
    }

    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.transitions.clone(), rewards, self.initial.clone(), self.gamma)
    }

    pub fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.len() != self.n_states || pi.iter().any(|row| row.len() != self.n_actions) {
            return Err(Error::contract("policy table has the wrong shape"));
        }
        for (s, row) in pi.iter().enumerate() {
            check_distribution(row, &format!("pi(.|{s})"))?;
        }
        Ok(())
    }

    /// `P_pi[s][s'] = sum_a pi(a|s) p(s'|s,a)`.
    pub fn policy_transition(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, s2| (0..self.n_actions).map(|a| pi[s][a] * self.p(s, a)[s2]).sum())
    }

    /// Next-state law of `pi` at `s`.
    pub fn next_state_law(&self, pi: &Policy, s: usize) -> Vec<f64> {
        (0..self.n_states).map(|s2| (0..self.n_actions).map(|a| pi[s][a] * self.p(s, a)[s2]).sum()).collect()
    }

    /// Solves `d = (1 - gamma) mu + gamma P_pi^T d`.
    pub fn occupancy(&self, pi: &Policy) -> Result<Occupancy> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let pt = self.policy_transition(pi).transpose();
        let system = DMatrix::identity(n, n) - pt * self.gamma;
        let rhs = DVector::from_iterator(n, self.initial.iter().map(|m| (1.0 - self.gamma) * m));
        let d = system.lu().solve(&rhs).ok_or_else(|| Error::contract("singular occupancy system"))?;
        let states: Vec<f64> = d.iter().copied().collect();
        let state_actions = (0..n).map(|s| pi[s].iter().map(|p| p * states[s]).collect()).collect();
        Ok(Occupancy { states, state_actions })
    }

    /// `max_s |d(s) - (1 - gamma) mu(s) - gamma sum p(s|s-,a-) d(s-,a-)|`.
    pub fn flow_residual(&self, occ: &Occupancy) -> f64 {
        (0..self.n_states)
            .map(|s| {
                let inflow: f64 = (0..self.n_states)
                    .flat_map(|sp| (0..self.n_actions).map(move |a| (sp, a)))
                    .map(|(sp, a)| self.p(sp, a)[s] * occ.state_actions[sp][a])
                    .sum();
                (occ.states[s] - (1.0 - self.gamma) * self.initial[s] - self.gamma * inflow).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `J = 1/(1-gamma) sum d(s,a) r(s,a)`.
    pub fn expected_return(&self, pi: &Policy) -> Result<f64> {
        let occ = self.occupancy(pi)?;
        Ok(self.return_from_occupancy(&occ))
    }

    pub fn return_from_occupancy(&self, occ: &Occupancy) -> f64 {
        let mut total = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                total += occ.state_actions[s][a] * self.r(s, a);
            }
        }
        total / (1.0 - self.gamma)
    }

    /// `sum_s mu(s) V(s)` with `V` from iterative policy evaluation.
    pub fn value_iteration_return(&self, pi: &Policy) -> Result<f64> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let r_pi: Vec<f64> = (0..n).map(|s| (0..self.n_actions).map(|a| pi[s][a] * self.r(s, a)).sum()).collect();
        let p_pi = self.policy_transition(pi);
        let mut v = vec![0.0; n];
        for _ in 0..100_000 {
            let next: Vec<f64> =
                (0..n).map(|s| r_pi[s] + self.gamma * (0..n).map(|j| p_pi[(s, j)] * v[j]).sum::<f64>()).collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= 1e-15 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
                break;
            }
        }
        Ok(self.initial.iter().zip(&v).map(|(m, x)| m * x).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(gamma: f64) -> TabularMdp {
        // one action; 0 -> 1 -> 0
        TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], gamma).unwrap()
    }

    #[test]
    fn cycle_occupancy() {
        let mdp = cycle(0.5);
        let occ = mdp.occupancy(&vec![vec![1.0], vec![1.0]]).unwrap();
        assert!((occ.states[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((occ.states[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(mdp.flow_residual(&occ) < 1e-12);
    }

    #[test]
    fn cycle_return() {
        let mdp = cycle(0.5);
        let pi = vec![vec![1.0], vec![1.0]];
        assert!((mdp.expected_return(&pi).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!((mdp.value_iteration_return(&pi).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_state() {
        for gamma in [0.0, 0.3, 0.99] {
            let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.5, 0.5], vec![1.0], gamma).unwrap();
            let occ = mdp.occupancy(&vec![vec![0.3, 0.7]]).unwrap();
            assert!((occ.states[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reward() {
        let mdp =
            TabularMdp::new(2, 2, vec![0.5, 0.5, 1.0, 0.0, 0.2, 0.8, 0.0, 1.0], vec![0.7; 4], vec![0.4, 0.6], 0.9)
                .unwrap();
        let pi = vec![vec![0.5, 0.5], vec![0.1, 0.9]];
        assert!((mdp.expected_return(&pi).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
        let mdp = cycle(0.5);
        assert!(mdp.occupancy(&vec![vec![0.5], vec![1.0]]).is_err());
    }
}
