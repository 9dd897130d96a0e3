use pma_lab::math::RngStream;
use pma_lab::tabular::{
    conditional_entropy, latent_projection, random_instance, simplex_grid_search, sweep, uniform_latent_policy,
    InstanceShape, LatentAbstraction, SweepConfig, TabularMdp, PHI_GRID_STEP, SLACK_TOL,
};
use proptest::prelude::*;

fn shape(ns: usize, na: usize, nz: usize) -> InstanceShape {
    InstanceShape { n_states: ns, n_actions: na, n_latent: nz, gamma: 0.9 }
}

/// Samples `t ~ Geometric(1 - gamma)` and records the state after `t` steps.
fn monte_carlo_occupancy(mdp: &TabularMdp, pi: &[Vec<f64>], samples: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut counts = vec![0usize; mdp.n_states()];
    for _ in 0..samples {
        let mut s = rng.categorical(mdp.initial());
        while rng.uniform() < mdp.gamma() {
            let a = rng.categorical(&pi[s]);
            s = rng.categorical(mdp.p(s, a));
        }
        counts[s] += 1;
    }
    counts.iter().map(|c| *c as f64 / samples as f64).collect()
}

#[test]
fn monte_carlo_occupancy_agrees_with_linear_solve() {
    let samples = 1_000_000;
    for seed in 0..3 {
        let mut rng = RngStream::new(seed, "mc");
        let inst = random_instance(shape(4, 2, 2), &mut rng).unwrap();
        let exact = inst.mdp.occupancy(&inst.policy).unwrap();
        let empirical = monte_carlo_occupancy(&inst.mdp, &inst.policy, samples, &mut rng.substream("walk"));
        for (d, e) in exact.states.iter().zip(&empirical) {
            let se = (d * (1.0 - d) / samples as f64).sqrt();
            assert!((d - e).abs() <= 3.0 * se + 1e-12, "seed {seed}: exact {d} vs sampled {e} (se {se})");
        }
    }
}

#[test]
fn occupancy_and_value_iteration_agree() {
    let mut rng = RngStream::new(11, "vi");
    for _ in 0..50 {
        let inst = random_instance(shape(5, 3, 2), &mut rng).unwrap();
        let a = inst.mdp.expected_return(&inst.policy).unwrap();
        let b = inst.mdp.value_iteration_return(&inst.policy).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn mimic_search_is_close_to_a_ten_times_finer_grid() {
    let mut rng = RngStream::new(7, "phi");
    for i in 0..20 {
        let nz = if i % 2 == 0 { 2 } else { 3 };
        let inst = random_instance(shape(4, 2, nz), &mut rng).unwrap();
        let abs = &inst.abstraction;
        let (s, a) = (i % 4, i % 2);
        let (_, tv) = abs.phi_star(&inst.mdp, s, a).unwrap();
        let columns: Vec<Vec<f64>> = (0..nz).map(|z| abs.latent_transition(&inst.mdp, s, z)).collect();
        let (_, fine_tv) = simplex_grid_search(inst.mdp.p(s, a), &columns, 2000);
        assert!(tv <= fine_tv + PHI_GRID_STEP, "instance {i}: {tv} vs finer {fine_tv}");
    }
}

#[test]
fn projected_policy_reproduces_mimicked_next_state_law() {
    let mut rng = RngStream::new(8, "proj");
    for _ in 0..20 {
        let inst = random_instance(shape(5, 3, 2), &mut rng).unwrap();
        let abs = &inst.abstraction;
        let table = abs.mimic_table(&inst.mdp).unwrap();
        let projected = latent_projection(&inst.policy, &table);
        let latent = abs.latent_mdp(&inst.mdp).unwrap();
        let mimicked = abs.mimicked_mdp(&inst.mdp, &table).unwrap();
        for s in 0..inst.mdp.n_states() {
            let lhs = latent.next_state_law(&projected, s);
            let rhs = mimicked.next_state_law(&inst.policy, s);
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((projected[s].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn single_latent_projection_is_deterministic() {
    let mut rng = RngStream::new(9, "one");
    let mut inst = random_instance(shape(3, 2, 1), &mut rng).unwrap();
    inst.abstraction = LatentAbstraction::new(&inst.mdp, vec![vec![vec![0.4, 0.6]]; 3]).unwrap();
    let table = inst.abstraction.mimic_table(&inst.mdp).unwrap();
    assert!(latent_projection(&inst.policy, &table).iter().all(|row| row == &vec![1.0]));
}

#[test]
fn uniform_sampler_reaches_maximum_latent_entropy() {
    let mut rng = RngStream::new(10, "ent");
    let inst = random_instance(shape(4, 2, 3), &mut rng).unwrap();
    let latent = inst.abstraction.latent_mdp(&inst.mdp).unwrap();
    let uniform = uniform_latent_policy(4, 3);
    let occ = latent.occupancy(&uniform).unwrap();
    assert!((conditional_entropy(&occ.states, &uniform) - 3f64.ln()).abs() < 1e-12);

    // empirical H(Z|S) from sampled (s, z) pairs
    let mut counts = vec![[0usize; 3]; 4];
    let mut s = rng.categorical(latent.initial());
    for _ in 0..300_000 {
        let z = rng.below(3);
        counts[s][z] += 1;
        s = rng.categorical(latent.p(s, z));
    }
    let total: usize = counts.iter().flatten().sum();
    let mut h = 0.0;
    for row in &counts {
        let n: usize = row.iter().sum();
        for c in row.iter().filter(|c| **c > 0) {
            let p = *c as f64 / n as f64;
            h -= (n as f64 / total as f64) * p * p.ln();
        }
    }
    assert!((h - 3f64.ln()).abs() < 1e-3, "{h}");
}

#[test]
fn two_hundred_random_instances_satisfy_every_bound() {
    let rows = sweep(&SweepConfig::default()).unwrap();
    assert_eq!(rows.len(), 200);
    for row in &rows {
        assert!(row.report.worst_slack() >= -SLACK_TOL);
        assert!(row.report.abstraction_gap.slack >= -SLACK_TOL);
        assert!(row.report.max_flow_residual < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_constraint_holds(seed in any::<u64>(), ns in 1usize..=5, na in 1usize..=3, gamma in 0.0f64..0.99) {
        let mut rng = RngStream::new(seed, "flow");
        let inst = random_instance(InstanceShape { n_states: ns, n_actions: na, n_latent: 2, gamma }, &mut rng).unwrap();
        let occ = inst.mdp.occupancy(&inst.policy).unwrap();
        prop_assert!(inst.mdp.flow_residual(&occ) < 1e-12);
        prop_assert!((occ.states.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_instances_respect_bounds(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, "bounds");
        let inst = random_instance(shape(1 + rng.below(5), 1 + rng.below(3), 2), &mut rng).unwrap();
        prop_assert!(pma_lab::tabular::verify_bounds(&inst).is_ok());
    }
}
