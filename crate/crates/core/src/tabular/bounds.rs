use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::abstraction::{latent_projection, LatentAbstraction, MimicTable};
use super::mdp::{Occupancy, Policy, TabularMdp};
use crate::error::{Error, Result};
use crate::math::stats::tv_unchecked;
use crate::math::RngStream;

/// Tolerance on bound slack.
pub const SLACK_TOL: f64 = 1e-9;
pub const FLOW_TOL: f64 = 1e-12;
pub const RETURN_AGREEMENT_TOL: f64 = 1e-9;
/// Mixing weights used when perturbing true dynamics into a learned model.
pub const MODEL_NOISE_LEVELS: [f64; 3] = [0.0, 0.1, 0.3];

/// Everything needed to evaluate both performance bounds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInstance {
    pub mdp: TabularMdp,
    /// Learned model over original actions, flat `[s][a][s']`.
    pub learned_transitions: Vec<f64>,
    /// Policy being evaluated.
    pub policy: Policy,
    /// Data-collection policy over original actions.
    pub data_policy: Policy,
    pub abstraction: LatentAbstraction,
    /// Learned model over latents, flat `[s][z][s']`.
    pub learned_latent_transitions: Vec<f64>,
    /// Data-collection policy over latents.
    pub latent_data_policy: Policy,
}

/// Occupancy-weighted TV errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Epsilons {
    /// Abstraction loss under the evaluated policy in the true MDP.
    pub abstraction: f64,
    /// Model error under the data policy.
    pub model: f64,
    /// Latent model error under the latent data policy.
    pub latent_model: f64,
    /// Policy shift from the data policy.
    pub policy: f64,
    /// Latent policy shift from the latent data policy.
    pub latent_policy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub eps_a: f64,
    pub eps_m: f64,
    pub eps_m_prime: f64,
    pub eps_pi: f64,
    pub eps_pi_prime: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundReport {
    fn new(eps: &Epsilons, lhs: f64, rhs: f64) -> Self {
        Self {
            eps_a: eps.abstraction,
            eps_m: eps.model,
            eps_m_prime: eps.latent_model,
            eps_pi: eps.policy,
            eps_pi_prime: eps.latent_policy,
            lhs,
            rhs,
            slack: rhs - lhs,
        }
    }
}

/// Reports for the latent-model bound, the classic bound and the
/// intermediate inequalities used to chain them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `|J_M(pi) - J_{learned latent}(projected pi)|`.
    pub latent_bound: BoundReport,
    /// `|J_M(pi) - J_{learned}(pi)|`.
    pub classic_bound: BoundReport,
    /// `|J_M(pi_D) - J_{learned}(pi)|`.
    pub performance_difference: BoundReport,
    /// `|J_M(pi) - J_{latent}(projected pi)|`.
    pub abstraction_gap: BoundReport,
    /// `|J_{latent}(projected pi) - J_{learned latent}(projected pi)|`.
    pub latent_model_gap: BoundReport,
    pub reward_bound: f64,
    pub max_flow_residual: f64,
    pub max_return_mismatch: f64,
}

impl VerificationReport {
    pub fn all(&self) -> [(&'static str, &BoundReport); 5] {
        [
            ("latent_bound", &self.latent_bound),
            ("classic_bound", &self.classic_bound),
            ("performance_difference", &self.performance_difference),
            ("abstraction_gap", &self.abstraction_gap),
            ("latent_model_gap", &self.latent_model_gap),
        ]
    }

    pub fn worst_slack(&self) -> f64 {
        self.all().iter().map(|(_, r)| r.slack).fold(f64::INFINITY, f64::min)
    }
}

fn occupancy_checked(mdp: &TabularMdp, pi: &Policy, residual: &mut f64) -> Result<Occupancy> {
    let occ = mdp.occupancy(pi)?;
    *residual = residual.max(mdp.flow_residual(&occ));
    Ok(occ)
}

fn state_weighted_tv(weights: &[f64], a: &Policy, b: &Policy) -> f64 {
    weights.iter().zip(a.iter().zip(b)).map(|(d, (x, y))| d * tv_unchecked(x, y)).sum()
}

fn pair_weighted_tv(occ: &Occupancy, lhs: &TabularMdp, rhs: &TabularMdp) -> f64 {
    let mut total = 0.0;
    for (s, row) in occ.state_actions.iter().enumerate() {
        for (a, d) in row.iter().enumerate() {
            total += d * tv_unchecked(lhs.p(s, a), rhs.p(s, a));
        }
    }
    total
}

struct Models {
    learned: TabularMdp,
    latent: TabularMdp,
    learned_latent: TabularMdp,
    mimicked: TabularMdp,
    projected: Policy,
}

impl TheoryInstance {
    fn models(&self) -> Result<(Models, MimicTable)> {
        let learned = self.mdp.with_transitions(self.learned_transitions.clone())?;
        let latent = self.abstraction.latent_mdp(&self.mdp)?;
        let learned_latent = latent.with_transitions(self.learned_latent_transitions.clone())?;
        let table = self.abstraction.mimic_table(&self.mdp)?;
        let mimicked = self.abstraction.mimicked_mdp(&self.mdp, &table)?;
        let projected = latent_projection(&self.policy, &table);
        Ok((Models { learned, latent, learned_latent, mimicked, projected }, table))
    }

    /// Exact epsilons from occupancy solves.
    pub fn epsilons(&self) -> Result<Epsilons> {
        let mut residual = 0.0;
        let (m, _) = self.models()?;
        self.epsilons_with(&m, &mut residual)
    }

    fn epsilons_with(&self, m: &Models, residual: &mut f64) -> Result<Epsilons> {
        let d_pi = occupancy_checked(&self.mdp, &self.policy, residual)?;
        let d_data = occupancy_checked(&self.mdp, &self.data_policy, residual)?;
        let d_latent_data = occupancy_checked(&m.latent, &self.latent_data_policy, residual)?;
        Ok(Epsilons {
            abstraction: pair_weighted_tv(&d_pi, &self.mdp, &m.mimicked),
            model: pair_weighted_tv(&d_data, &self.mdp, &m.learned),
            latent_model: pair_weighted_tv(&d_latent_data, &m.latent, &m.learned_latent),
            policy: state_weighted_tv(&d_data.states, &self.policy, &self.data_policy),
            latent_policy: state_weighted_tv(&d_latent_data.states, &m.projected, &self.latent_data_policy),
        })
    }

    /// Computes every report without judging it.
    pub fn reports(&self) -> Result<VerificationReport> {
        let (m, _) = self.models()?;
        let mut residual = 0.0;
        let eps = self.epsilons_with(&m, &mut residual)?;
        let mut mismatch = 0.0f64;
        let mut ret = |mdp: &TabularMdp, pi: &Policy| -> Result<f64> {
            let j = mdp.expected_return(pi)?;
            mismatch = mismatch.max((j - mdp.value_iteration_return(pi)?).abs());
            Ok(j)
        };
        let j_true = ret(&self.mdp, &self.policy)?;
        let j_true_data = ret(&self.mdp, &self.data_policy)?;
        let j_learned = ret(&m.learned, &self.policy)?;
        let j_latent = ret(&m.latent, &m.projected)?;
        let j_learned_latent = ret(&m.learned_latent, &m.projected)?;

        let gamma = self.mdp.gamma();
        let r = self.mdp.reward_bound();
        let c = r / ((1.0 - gamma) * (1.0 - gamma));
        let e = &eps;
        Ok(VerificationReport {
            latent_bound: BoundReport::new(
                e,
                (j_true - j_learned_latent).abs(),
                c * (2.0 * gamma * e.abstraction + 4.0 * e.latent_policy + 2.0 * gamma * e.latent_model),
            ),
            classic_bound: BoundReport::new(
                e,
                (j_true - j_learned).abs(),
                c * (4.0 * e.policy + 2.0 * gamma * e.model),
            ),
            performance_difference: BoundReport::new(
                e,
                (j_true_data - j_learned).abs(),
                c * (2.0 * gamma * e.model + 2.0 * e.policy),
            ),
            abstraction_gap: BoundReport::new(e, (j_true - j_latent).abs(), c * 2.0 * gamma * e.abstraction),
            latent_model_gap: BoundReport::new(
                e,
                (j_latent - j_learned_latent).abs(),
                c * (4.0 * e.latent_policy + 2.0 * gamma * e.latent_model),
            ),
            reward_bound: r,
            max_flow_residual: residual,
            max_return_mismatch: mismatch,
        })
    }

    /// Same instance with every reward multiplied by `factor`.
    pub fn scale_rewards(&self, factor: f64) -> Result<Self> {
        let rewards = self.mdp.rewards().iter().map(|r| r * factor).collect();
        Ok(Self { mdp: self.mdp.with_rewards(rewards)?, ..self.clone() })
    }
}

/// Computes all reports and fails on any violated bound or solver check.
pub fn verify_bounds(instance: &TheoryInstance) -> Result<VerificationReport> {
    let report = instance.reports()?;
    let dump = || serde_json::to_string(instance).unwrap_or_else(|e| format!("<unserializable: {e}>"));
    if report.max_flow_residual >= FLOW_TOL || report.max_return_mismatch >= RETURN_AGREEMENT_TOL {
        return Err(Error::Audit(format!(
            "solver check failed (flow residual {:.3e}, return mismatch {:.3e}) on instance {}",
            report.max_flow_residual,
            report.max_return_mismatch,
            dump()
        )));
    }
    for (name, r) in report.all() {
        if r.slack < -SLACK_TOL {
            return Err(Error::BoundViolation(format!("{name}: lhs {} > rhs {} on instance {}", r.lhs, r.rhs, dump())));
        }
    }
    Ok(report)
}

/// Sizes of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_latent: usize,
    pub gamma: f64,
}

fn random_policy(rows: usize, cols: usize, rng: &mut RngStream) -> Policy {
    (0..rows).map(|_| rng.dirichlet_uniform(cols)).collect()
}

fn perturb(transitions: &[f64], n_states: usize, rng: &mut RngStream) -> Vec<f64> {
    let eta = MODEL_NOISE_LEVELS[rng.below(MODEL_NOISE_LEVELS.len())];
    transitions
        .chunks(n_states)
        .flat_map(|row| {
            let noise = rng.dirichlet_uniform(n_states);
            row.iter().zip(noise).map(|(p, q)| (1.0 - eta) * p + eta * q).collect::<Vec<_>>()
        })
        .collect()
}

/// Random instance with Dirichlet(1) dynamics and policies and
/// state-dependent rewards drawn from `U[-1, 1]`.
pub fn random_instance(shape: InstanceShape, rng: &mut RngStream) -> Result<TheoryInstance> {
    let InstanceShape { n_states: ns, n_actions: na, n_latent: nz, gamma } = shape;
    if ns == 0 || na == 0 || nz == 0 {
        return Err(Error::contract("instance sizes must be positive"));
    }
    let transitions: Vec<f64> = (0..ns * na).flat_map(|_| rng.dirichlet_uniform(ns)).collect();
    // rewards depend on the state only; see the abstraction identity
    let state_rewards: Vec<f64> = (0..ns).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let rewards = state_rewards.iter().flat_map(|r| std::iter::repeat_n(*r, na)).collect();
    let initial = rng.dirichlet_uniform(ns);
    let mdp = TabularMdp::new(ns, na, transitions, rewards, initial, gamma)?;
    let policy = random_policy(ns, na, rng);
    let data_policy = random_policy(ns, na, rng);
    let decoder = (0..ns).map(|_| random_policy(nz, na, rng)).collect();
    let abstraction = LatentAbstraction::new(&mdp, decoder)?;
    let learned_transitions = perturb(mdp.transitions(), ns, rng);
    let latent = abstraction.latent_mdp(&mdp)?;
    let learned_latent_transitions = perturb(latent.transitions(), ns, rng);
    let latent_data_policy = random_policy(ns, nz, rng);
    Ok(TheoryInstance {
        mdp,
        learned_transitions,
        policy,
        data_policy,
        abstraction,
        learned_latent_transitions,
        latent_data_policy,
    })
}

/// Settings for a batch of random instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub n_latent: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { instances: 200, max_states: 5, max_actions: 3, n_latent: 2, gamma: 0.9, seed: 0 }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_states == 0 || self.max_actions == 0 || self.n_latent == 0 {
            return Err(Error::config("tabular", "sizes must be positive"));
        }
        if self.n_latent > super::abstraction::MAX_SEARCH_LATENTS {
            return Err(Error::UnsupportedSize(format!("n_latent {} exceeds 3", self.n_latent)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("tabular.gamma", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One verified instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub shape: InstanceShape,
    pub report: VerificationReport,
}

/// Generates and verifies `instances` random problems in parallel; each
/// instance draws from its own substream so results do not depend on
/// scheduling.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, "tabular");
    (0..cfg.instances)
        .into_par_iter()
        .map(|index| {
            let mut rng = root.substream(&format!("instance-{index}"));
            let shape = InstanceShape {
                n_states: 1 + rng.below(cfg.max_states),
                n_actions: 1 + rng.below(cfg.max_actions),
                n_latent: cfg.n_latent,
                gamma: cfg.gamma,
            };
            let instance = random_instance(shape, &mut rng)?;
            Ok(SweepRow { index, shape, report: verify_bounds(&instance)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(ns: usize, na: usize) -> InstanceShape {
        InstanceShape { n_states: ns, n_actions: na, n_latent: 2, gamma: 0.9 }
    }

    #[test]
    fn identity_instance_has_zero_classic_gap() {
        let mut rng = RngStream::new(3, "t");
        let mut inst = random_instance(shape(4, 2), &mut rng).unwrap();
        inst.learned_transitions = inst.mdp.transitions().to_vec();
        inst.data_policy = inst.policy.clone();
        let eps = inst.epsilons().unwrap();
        assert_eq!(eps.model, 0.0);
        assert_eq!(eps.policy, 0.0);
        let r = inst.reports().unwrap();
        assert!(r.classic_bound.lhs < 1e-12);
        assert_eq!(r.classic_bound.rhs, 0.0);
    }

    #[test]
    fn decoder_reproducing_every_action_has_no_abstraction_loss() {
        let mut rng = RngStream::new(4, "t");
        let mut inst = random_instance(shape(3, 2), &mut rng).unwrap();
        // latent z deterministically picks action z
        let dec = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3];
        inst.abstraction = LatentAbstraction::new(&inst.mdp, dec).unwrap();
        let latent = inst.abstraction.latent_mdp(&inst.mdp).unwrap();
        inst.learned_latent_transitions = latent.transitions().to_vec();
        let r = verify_bounds(&inst).unwrap();
        assert!(r.abstraction_gap.eps_a < 1e-12);
        assert!(r.abstraction_gap.lhs < 1e-9);
    }

    #[test]
    fn reward_scaling_is_homogeneous() {
        let mut rng = RngStream::new(5, "t");
        let inst = random_instance(shape(4, 3), &mut rng).unwrap();
        let base = inst.reports().unwrap();
        let scaled = inst.scale_rewards(3.0).unwrap().reports().unwrap();
        for ((_, a), (_, b)) in base.all().iter().zip(scaled.all().iter()) {
            assert!((b.lhs - 3.0 * a.lhs).abs() < 1e-9);
            assert!((b.rhs - 3.0 * a.rhs).abs() < 1e-9);
            assert_eq!(a.slack >= 0.0, b.slack >= 0.0);
        }
    }

    #[test]
    fn action_dependent_reward_can_break_the_abstraction_bound() {
        // a single self-looping state: every model is exact, but the
        // decoder's reward differs from the evaluated policy's reward
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, -1.0], vec![1.0], 0.9).unwrap();
        let abstraction = LatentAbstraction::new(&mdp, vec![vec![vec![0.5, 0.5]]]).unwrap();
        let inst = TheoryInstance {
            learned_transitions: mdp.transitions().to_vec(),
            policy: vec![vec![1.0, 0.0]],
            data_policy: vec![vec![1.0, 0.0]],
            abstraction,
            learned_latent_transitions: vec![1.0],
            latent_data_policy: vec![vec![1.0]],
            mdp,
        };
        assert!(matches!(verify_bounds(&inst), Err(Error::BoundViolation(msg)) if msg.contains("\"mdp\"")));
    }

    #[test]
    fn sweep_is_reproducible_and_clean() {
        let cfg = SweepConfig { instances: 24, ..SweepConfig::default() };
        let a = sweep(&cfg).unwrap();
        let b = sweep(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|row| row.report.worst_slack() >= -SLACK_TOL));
    }

    #[test]
    fn sweep_rejects_large_latent_spaces() {
        let cfg = SweepConfig { n_latent: 4, ..SweepConfig::default() };
        assert!(matches!(sweep(&cfg), Err(Error::UnsupportedSize(_))));
    }
}
