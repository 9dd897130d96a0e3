//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture` gives
//! a readable summary.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{array, Array2};
use pma_lab::dynamics::{Conditioner, EnsembleDynamics, GaussianDynamicsModel};
use pma_lab::envs::Env;
use pma_lab::experiment::{
    evaluate_run, held_out_model_error, pretrain, run_episode, Artifacts, EvalRequest, ExperimentConfig, Method,
    Planner, RunRecord,
};
use pma_lab::intrinsic::r_emp_with_samples;
use pma_lab::math::rng::labels;
use pma_lab::math::{Mlp, RngStream};
use pma_lab::planners::{mppi_plan, mppi_update, ExactModel, MbpoConfig, MppiConfig};
use pma_lab::tabular::{sweep, SweepConfig};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {name}: {tag} ({detail})");
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- 1

/// Loss `sum(weights * f(x))` so that every output contributes.
fn weighted_output(net: &Mlp, x: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    (&net.forward_batch(x.view()) * weights).sum()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = RngStream::new(2024, "gradient-check");
    let cases = 120;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let depth = 1 + rng.below(3);
        let mut sizes = vec![1 + rng.below(5)];
        for _ in 0..depth {
            sizes.push(2 + rng.below(7));
        }
        sizes.push(1 + rng.below(4));
        let mut net = Mlp::new(&sizes, &mut rng);
        let batch = 1 + rng.below(3);
        let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.uniform_range(-2.0, 2.0));
        let w = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.uniform_range(-1.0, 1.0));

        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let grad = net.gradient(&cache, w.view()).unwrap();

        let mut fd_params = vec![0.0; net.num_params()];
        for (i, fd) in fd_params.iter_mut().enumerate() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = weighted_output(&net, &x, &w);
            net.params_mut()[i] = orig - h;
            let down = weighted_output(&net, &x, &w);
            net.params_mut()[i] = orig;
            *fd = (up - down) / (2.0 * h);
        }
        let mut fd_input = Array2::zeros(x.raw_dim());
        for idx in ndarray::indices(x.raw_dim()) {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            fd_input[idx] = (weighted_output(&net, &xp, &w) - weighted_output(&net, &xm, &w)) / (2.0 * h);
        }

        let analytic: Vec<f64> = grad.params.iter().chain(grad.input.iter()).copied().collect();
        let numeric: Vec<f64> = fd_params.iter().chain(fd_input.iter()).copied().collect();
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied())).max(1e-12);
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 10.0;
    verdict(1, "gradient correctness", pass, &format!("{cases} cases, worst relative error {worst:.2e}, {secs:.1}s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_tabular_bounds_hold() {
    let start = Instant::now();
    let cfg = SweepConfig::default();
    assert_eq!((cfg.instances, cfg.max_states, cfg.max_actions, cfg.n_latent, cfg.gamma), (200, 5, 3, 2, 0.9));
    let rows = sweep(&cfg).expect("sweep");
    let mut worst = f64::INFINITY;
    let mut flow: f64 = 0.0;
    let mut mismatch: f64 = 0.0;
    for row in &rows {
        let r = &row.report;
        for b in [&r.latent_bound, &r.classic_bound, &r.performance_difference, &r.abstraction_gap] {
            worst = worst.min(b.slack);
        }
        flow = flow.max(r.max_flow_residual);
        mismatch = mismatch.max(r.max_return_mismatch);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = rows.len() == 200 && worst >= -1e-9 && flow < 1e-12 && mismatch < 1e-9 && secs < 120.0;
    verdict(
        2,
        "tabular theory",
        pass,
        &format!(
            "{} instances, min slack {worst:.2e}, flow residual {flow:.1e}, return mismatch {mismatch:.1e}, {secs:.1}s",
            rows.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Single-layer members whose normalized output equals their bias.
fn constant_members(biases: &[[f64; 2]], conditioner: Conditioner, cond_dim: usize) -> Vec<GaussianDynamicsModel> {
    biases
        .iter()
        .map(|b| {
            let mut net = Mlp::zeros(&[2 + cond_dim, 2]);
            let n = net.num_params();
            net.params_mut()[n - 2..].copy_from_slice(b);
            GaussianDynamicsModel::from_parts(conditioner, 2, cond_dim, net, 1e-3)
        })
        .collect()
}

#[test]
fn criterion_3_estimator_identities() {
    let mut rng = RngStream::new(5, "identities");
    let mut notes = Vec::new();

    // r_emp with one prior sample equal to the executed latent
    let vlb = GaussianDynamicsModel::new(2, 2, &[16, 16], Conditioner::Latent, 1e-3, &mut rng);
    let mut r_emp_ok = true;
    for _ in 0..50 {
        let s = rng.uniform_box(2);
        let z = rng.uniform_box(2);
        let next: Vec<f64> = s.iter().map(|v| v + 0.1 * rng.normal()).collect();
        let r = r_emp_with_samples(&vlb, &s, &z, &next, std::slice::from_ref(&z)).unwrap();
        r_emp_ok &= r == 0.0;
    }
    notes.push(format!("r_emp(L=1) zero: {r_emp_ok}"));

    // identical ensemble members
    let rng_ref = RngStream::new(0, "ensemble");
    let twins =
        EnsembleDynamics::from_members(constant_members(&[[0.3, -0.1]; 4], Conditioner::Action, 1), &rng_ref).unwrap();
    let d = twins.disagreement_trace(&[0.5, -0.5], &[0.2]).unwrap();
    let disagreement_ok = d == 0.0;
    notes.push(format!("identical disagreement {d}"));

    // hand case: member means (0,0) and (2,0), lambda 1
    let pair =
        EnsembleDynamics::from_members(constant_members(&[[0.0, 0.0], [2.0, 0.0]], Conditioner::Action, 1), &rng_ref)
            .unwrap();
    let p = pair.mopo_penalty(&[1.0, 1.0], &[0.3], 1.0).unwrap();
    let mopo_ok = p == -4.0;
    notes.push(format!("penalty {p}"));

    // MPPI weighting limits
    let samples = array![[1.0, 2.0], [3.0, -2.0], [5.0, 0.0], [-1.0, 4.0]];
    let returns = [0.1, 0.3, 0.2, -5.0];
    let flat = mppi_update(&[0.0, 0.0], samples.view(), &returns, 0.0).unwrap();
    let mean = [2.0, 1.0];
    let alpha0_ok = flat.iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-12);
    let sharp = mppi_update(&[0.0, 0.0], samples.view(), &returns, 1e6).unwrap();
    let argmax_ok = (sharp[0] - 3.0).abs() < 1e-6 && (sharp[1] + 2.0).abs() < 1e-6;
    notes.push(format!("mppi alpha=0 {flat:?}, alpha=1e6 {sharp:?}"));

    let pass = r_emp_ok && disagreement_ok && mopo_ok && alpha0_ok && argmax_ok;
    verdict(3, "estimator identities", pass, &notes.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

const GRID: [f64; 3] = [-1.0, 0.0, 1.0];

/// Best return over all action sequences whose components lie on `GRID`.
fn brute_force(env: &Env, task: &str, s: &[f64], steps_left: usize) -> f64 {
    if steps_left == 0 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for ax in GRID {
        for ay in GRID {
            let a = [ax, ay];
            let (next, done) = env.simulate(s, &a).unwrap();
            let r = env.task_reward(task, s, &a, &next).unwrap();
            let rest = if done { 0.0 } else { brute_force(env, task, &next, steps_left - 1) };
            best = best.max(r + rest);
        }
    }
    best
}

#[test]
fn criterion_4_mppi_matches_brute_force() {
    let start = Instant::now();
    let horizon = 7;
    let env = Env::make("two_zone_left").unwrap().with_horizon(horizon);
    let model = ExactModel { env: &env };
    let cfg = MppiConfig::default();
    let rng = RngStream::new(0, labels::EVAL);
    // same start state the planner will draw
    let s0 = env.reset(&mut rng.substream("reset"));
    let optimum = brute_force(&env, "east", &s0, horizon);
    let out = mppi_plan(&model, &env, "east", &cfg, 0.0, &mut rng.clone()).unwrap();
    let ratio = out.true_return / optimum;
    let secs = start.elapsed().as_secs_f64();
    let pass = optimum > 0.0 && ratio >= 0.95 && secs < 60.0;
    verdict(
        4,
        "planner oracle",
        pass,
        &format!("MPPI {:.4} vs exhaustive {optimum:.4} ({:.1}%), {secs:.1}s", out.true_return, 100.0 * ratio),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5 and 6

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const HELD_OUT: usize = 2000;
const TASKS: [&str; 3] = ["east", "west", "north"];

struct SeedResult {
    mse: f64,
    gap: f64,
}

fn desk_results(method: Method, out: &Path) -> Vec<SeedResult> {
    let cfg = ExperimentConfig::desk("two_zone", method, DESK_SEEDS.to_vec(), out);
    let env = cfg.make_env().unwrap();
    pretrain(&cfg)
        .unwrap()
        .into_iter()
        .zip(DESK_SEEDS)
        .map(|(dir, seed)| {
            let record = RunRecord::load(&dir).unwrap();
            let art = Artifacts::load(&record.final_checkpoint(&dir).unwrap()).unwrap();
            let mse = held_out_model_error(&art, &env, HELD_OUT, seed).unwrap();
            let mut gap = 0.0;
            for task in TASKS {
                let req = EvalRequest { planner: Planner::Mppi, task: task.into(), lambdas: vec![0.0], seeds: vec![0] };
                let row = &evaluate_run(&dir, &req).unwrap().rows[0];
                gap += (row.predicted_return - row.true_return).abs() / TASKS.len() as f64;
            }
            SeedResult { mse, gap }
        })
        .collect()
}

#[test]
fn criteria_5_and_6_latent_model_is_more_predictable() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let pma = desk_results(Method::Pma, tmp.path());
    let random = desk_results(Method::ClassicRandom, tmp.path());
    let secs = start.elapsed().as_secs_f64();

    let mse_wins = pma.iter().zip(&random).filter(|(p, r)| p.mse < r.mse).count();
    let gap_wins = pma.iter().zip(&random).filter(|(p, r)| p.gap < r.gap).count();
    let fmt = |f: &dyn Fn(&SeedResult) -> f64, rows: &[SeedResult]| {
        rows.iter().map(|r| format!("{:.4}", f(r))).collect::<Vec<_>>().join(" ")
    };
    let in_time = secs < 1800.0;
    verdict(
        5,
        "model error",
        mse_wins >= 4 && in_time,
        &format!(
            "PMA wins {mse_wins}/5; mse pma [{}] random [{}]; {secs:.0}s",
            fmt(&|r| r.mse, &pma),
            fmt(&|r| r.mse, &random)
        ),
    );
    verdict(
        6,
        "exploitation gap",
        gap_wins >= 4 && in_time,
        &format!(
            "PMA wins {gap_wins}/5; |pred-true| pma [{}] random [{}]",
            fmt(&|r| r.gap, &pma),
            fmt(&|r| r.gap, &random)
        ),
    );
    assert!(mse_wins >= 4, "criterion 5");
    assert!(gap_wins >= 4, "criterion 6");
    assert!(in_time, "criteria 5/6 runtime {secs:.0}s");
}

// ---------------------------------------------------------------- 7

fn tiny_config(method: Method, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk("two_zone", method, vec![3], out);
    cfg.epochs = 2;
    cfg.horizon = Some(30);
    cfg.pma.steps_per_epoch = 200;
    cfg.classic.steps_per_epoch = 200;
    cfg.pma.model_steps = 16;
    cfg.classic.model_steps = 16;
    cfg.probe.every = 1;
    cfg.probe.tasks = vec!["east".into()];
    cfg.probe.mppi = MppiConfig { horizon: 5, population: 16, iterations: 2, ..MppiConfig::default() };
    cfg.eval.mppi = MppiConfig { horizon: 5, population: 16, iterations: 2, ..MppiConfig::default() };
    cfg.eval.mbpo =
        MbpoConfig { epochs: 2, steps_per_epoch: 60, policy_steps: 4, hidden: vec![16, 16], ..MbpoConfig::default() };
    cfg.eval.mbpo.sac.batch_size = 32;
    cfg
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_7_evaluation_never_touches_the_environment_outside_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut episodes = 0;
    for method in [Method::Pma, Method::ClassicRandom] {
        let cfg = tiny_config(method, tmp.path());
        let dir = pretrain(&cfg).unwrap().remove(0);
        let record = RunRecord::load(&dir).unwrap();
        let ckpt = record.final_checkpoint(&dir).unwrap();
        let before = dir_bytes(&ckpt);
        let art = Artifacts::load(&ckpt).unwrap();
        let model = art.planning_model().unwrap();
        let frozen = art.replay.as_ref().map(|r| r.as_slice()).unwrap_or(&[]);
        for planner in [Planner::Mppi, Planner::Mbpo, Planner::SacFull] {
            // an independently owned counter, not the one the library audits
            let env = cfg.make_env().unwrap();
            let mut rng = RngStream::new(0, labels::EVAL).substream("audit");
            let out = run_episode(planner, model.as_ref(), &env, frozen, "north", 1.0, &cfg, &mut rng).unwrap();
            let extra = env.real_steps() as i64 - out.steps as i64;
            episodes += 1;
            if extra != 0 {
                problems.push(format!("{method}/{planner}: {extra} undeclared steps"));
            }
            let req = EvalRequest { planner, task: "north".into(), lambdas: vec![0.0, 5.0], seeds: vec![0, 1] };
            let outcome = evaluate_run(&dir, &req).unwrap();
            let declared: u64 = outcome.rows.iter().map(|r| r.steps as u64).sum();
            episodes += outcome.rows.len();
            if outcome.env_steps != declared {
                problems.push(format!("{method}/{planner}: evaluate counted {} vs {declared}", outcome.env_steps));
            }
        }
        if dir_bytes(&ckpt) != before {
            problems.push(format!("{method}: checkpoint changed during evaluation"));
        }
    }
    let pass = problems.is_empty();
    let detail = if pass { format!("{episodes} episodes, 0 undeclared steps") } else { problems.join("; ") };
    verdict(7, "zero-shot purity", pass, &detail);
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_identical_runs_produce_identical_metrics() {
    let mut identical = true;
    let mut sizes = Vec::new();
    for method in [Method::Pma, Method::ClassicRnd] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = pretrain(&tiny_config(method, a.path())).unwrap().remove(0);
        let db = pretrain(&tiny_config(method, b.path())).unwrap().remove(0);
        for file in ["metrics.jsonl", "probes.jsonl"] {
            let x = fs::read(da.join(file)).unwrap();
            let y = fs::read(db.join(file)).unwrap();
            identical &= !x.is_empty() && x == y;
            sizes.push(format!("{method}/{file} {}B", x.len()));
        }
    }
    verdict(8, "reproducibility", identical, &format!("byte-identical: {}", sizes.join(", ")));
    assert!(identical);
}
