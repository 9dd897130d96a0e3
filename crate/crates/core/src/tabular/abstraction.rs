use serde::{Deserialize, Serialize};

use super::mdp::{check_distribution, Policy, TabularMdp};
use crate::error::{Error, Result};
use crate::math::stats::tv_unchecked;

/// Coarse simplex resolution for the mimicking-distribution search.
pub const PHI_GRID_STEP: f64 = 0.005;
const COARSE_DIVISIONS: usize = 200;
const REFINE_FACTOR: usize = 10;
const TIE_TOL: f64 = 1e-13;
pub const MAX_SEARCH_LATENTS: usize = 3;

/// Decoder table `pi_z(a | s, z)` over a finite latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAbstraction {
    n_latent: usize,
    /// `decoder[s][z][a]`.
    decoder: Vec<Vec<Vec<f64>>>,
}

/// Best mixture over latents for every `(s, a)`, with its TV residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MimicTable {
    /// `weights[s][a][z]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub residual: Vec<Vec<f64>>,
}

impl LatentAbstraction {
    pub fn new(mdp: &TabularMdp, decoder: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_latent = decoder.first().map_or(0, Vec::len);
        if n_latent == 0 || decoder.len() != mdp.n_states() {
            return Err(Error::contract("decoder table must cover every state with at least one latent"));
        }
        for (s, rows) in decoder.iter().enumerate() {
            if rows.len() != n_latent || rows.iter().any(|r| r.len() != mdp.n_actions()) {
                return Err(Error::contract("decoder table is ragged"));
            }
            for (z, row) in rows.iter().enumerate() {
                check_distribution(row, &format!("decoder(.|{s},{z})"))?;
            }
        }
        Ok(Self { n_latent, decoder })
    }

    pub fn n_latent(&self) -> usize {
        self.n_latent
    }

    pub fn decoder(&self, s: usize, z: usize) -> &[f64] {
        &self.decoder[s][z]
    }

    /// `p_z(s' | s, z) = sum_a pi_z(a|s,z) p(s'|s,a)`.
    pub fn latent_transition(&self, mdp: &TabularMdp, s: usize, z: usize) -> Vec<f64> {
        let mut out = vec![0.0; mdp.n_states()];
        for (a, w) in self.decoder[s][z].iter().enumerate() {
            for (o, p) in out.iter_mut().zip(mdp.p(s, a)) {
                *o += w * p;
            }
        }
        out
    }

    /// `r(s, z) = sum_a pi_z(a|s,z) r(s,a)`.
    pub fn latent_reward(&self, mdp: &TabularMdp, s: usize, z: usize) -> f64 {
        self.decoder[s][z].iter().enumerate().map(|(a, w)| w * mdp.r(s, a)).sum()
    }

    /// The MDP whose actions are latents, built from the current decoder.
    pub fn latent_mdp(&self, mdp: &TabularMdp) -> Result<TabularMdp> {
        let ns = mdp.n_states();
        let mut transitions = Vec::with_capacity(ns * self.n_latent * ns);
        let mut rewards = Vec::with_capacity(ns * self.n_latent);
        for s in 0..ns {
            for z in 0..self.n_latent {
                transitions.extend(self.latent_transition(mdp, s, z));
                rewards.push(self.latent_reward(mdp, s, z));
            }
        }
        TabularMdp::new(ns, self.n_latent, transitions, rewards, mdp.initial().to_vec(), mdp.gamma())
    }

    /// Mixture over latents that best reproduces `p(.|s,a)` in total variation.
    pub fn phi_star(&self, mdp: &TabularMdp, s: usize, a: usize) -> Result<(Vec<f64>, f64)> {
        if self.n_latent > MAX_SEARCH_LATENTS {
            return Err(Error::UnsupportedSize(format!(
                "mimic search supports at most {MAX_SEARCH_LATENTS} latents, got {}",
                self.n_latent
            )));
        }
        let columns: Vec<Vec<f64>> = (0..self.n_latent).map(|z| self.latent_transition(mdp, s, z)).collect();
        Ok(simplex_search(mdp.p(s, a), &columns))
    }

    pub fn mimic_table(&self, mdp: &TabularMdp) -> Result<MimicTable> {
        let mut weights = Vec::with_capacity(mdp.n_states());
        let mut residual = Vec::with_capacity(mdp.n_states());
        for s in 0..mdp.n_states() {
            let mut w_row = Vec::with_capacity(mdp.n_actions());
            let mut r_row = Vec::with_capacity(mdp.n_actions());
            for a in 0..mdp.n_actions() {
                let (phi, tv) = self.phi_star(mdp, s, a)?;
                w_row.push(phi);
                r_row.push(tv);
            }
            weights.push(w_row);
            residual.push(r_row);
        }
        Ok(MimicTable { weights, residual })
    }

    /// Dynamics over original actions obtained by routing each action
    /// through its mimicking latent mixture.
    pub fn mimicked_mdp(&self, mdp: &TabularMdp, table: &MimicTable) -> Result<TabularMdp> {
        let ns = mdp.n_states();
        let mut transitions = Vec::with_capacity(ns * mdp.n_actions() * ns);
        for s in 0..ns {
            let cols: Vec<Vec<f64>> = (0..self.n_latent).map(|z| self.latent_transition(mdp, s, z)).collect();
            for a in 0..mdp.n_actions() {
                transitions.extend(mix(&table.weights[s][a], &cols));
            }
        }
        mdp.with_transitions(transitions)
    }
}

/// `pi_z(z|s) = sum_a pi(a|s) phi(z|s,a)`.
pub fn latent_projection(policy: &Policy, table: &MimicTable) -> Policy {
    policy
        .iter()
        .zip(&table.weights)
        .map(|(pi_s, phi_s)| {
            let nz = phi_s.first().map_or(0, Vec::len);
            let mut out = vec![0.0; nz];
            for (p, phi) in pi_s.iter().zip(phi_s) {
                for (o, w) in out.iter_mut().zip(phi) {
                    *o += p * w;
                }
            }
            out
        })
        .collect()
}

/// Uniform latent sampler at every state.
pub fn uniform_latent_policy(n_states: usize, n_latent: usize) -> Policy {
    vec![vec![1.0 / n_latent as f64; n_latent]; n_states]
}

/// `H(Z | S) = sum_s d(s) H(pi(.|s))` in nats.
pub fn conditional_entropy(state_weights: &[f64], policy: &Policy) -> f64 {
    state_weights
        .iter()
        .zip(policy)
        .map(|(d, row)| d * row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum::<f64>())
        .sum()
}

fn mix(weights: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; columns.first().map_or(0, Vec::len)];
    for (w, col) in weights.iter().zip(columns) {
        for (o, c) in out.iter_mut().zip(col) {
            *o += w * c;
        }
    }
    out
}

/// Calls `visit` on every integer composition of `total` into `lo.len()`
/// parts with the leading parts inside `[lo, hi]`, in lexicographic order.
fn compositions(total: usize, lo: &[usize], hi: &[usize], visit: &mut dyn FnMut(&[usize])) {
    fn rec(prefix: &mut Vec<usize>, left: usize, lo: &[usize], hi: &[usize], visit: &mut dyn FnMut(&[usize])) {
        let k = prefix.len();
        if k + 1 == lo.len() {
            if left >= lo[k] && left <= hi[k] {
                prefix.push(left);
                visit(prefix);
                prefix.pop();
            }
            return;
        }
        for i in lo[k]..=hi[k].min(left) {
            prefix.push(i);
            rec(prefix, left - i, lo, hi, visit);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(lo.len()), total, lo, hi, visit);
}

fn grid_best(target: &[f64], columns: &[Vec<f64>], divisions: usize, lo: &[usize], hi: &[usize]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    let scale = 1.0 / divisions as f64;
    let mut weights = vec![0.0; columns.len()];
    compositions(divisions, lo, hi, &mut |ints| {
        for (w, i) in weights.iter_mut().zip(ints) {
            *w = *i as f64 * scale;
        }
        let tv = tv_unchecked(target, &mix(&weights, columns));
        // enumeration is lexicographic, so keeping the first of near-ties
        // yields the lexicographically smallest minimiser
        if best.as_ref().is_none_or(|(_, b)| tv < b - TIE_TOL) {
            best = Some((ints.to_vec(), tv));
        }
    });
    best.expect("simplex grid is never empty")
}

/// Coarse grid at `PHI_GRID_STEP`, then one local pass at a tenth of it.
pub(crate) fn simplex_search(target: &[f64], columns: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let k = columns.len();
    let (coarse, _) = grid_best(target, columns, COARSE_DIVISIONS, &vec![0; k], &vec![COARSE_DIVISIONS; k]);
    let fine = COARSE_DIVISIONS * REFINE_FACTOR;
    let lo: Vec<usize> = coarse.iter().map(|c| (c * REFINE_FACTOR).saturating_sub(REFINE_FACTOR)).collect();
    let hi: Vec<usize> = coarse.iter().map(|c| (c * REFINE_FACTOR + REFINE_FACTOR).min(fine)).collect();
    let (ints, tv) = grid_best(target, columns, fine, &lo, &hi);
    (ints.iter().map(|i| *i as f64 / fine as f64).collect(), tv)
}

/// Exhaustive search on a uniform grid with `divisions` steps per unit.
pub fn simplex_grid_search(target: &[f64], columns: &[Vec<f64>], divisions: usize) -> (Vec<f64>, f64) {
    let k = columns.len();
    let (ints, tv) = grid_best(target, columns, divisions, &vec![0; k], &vec![divisions; k]);
    (ints.iter().map(|i| *i as f64 / divisions as f64).collect(), tv)
}
