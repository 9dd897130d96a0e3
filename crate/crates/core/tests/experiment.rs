use std::fs;
use std::path::{Path, PathBuf};

use pma_lab::experiment::{
    build_report, check_fair_budget, evaluate_run, load_eval_rows, pretrain, write_csv, Artifacts, EvalRequest,
    ExperimentConfig, Method, Planner, RunRecord, DEFAULT_LAMBDAS,
};
use pma_lab::planners::{MbpoConfig, MppiConfig};
use pma_lab::Error;

fn small(method: Method, seeds: Vec<u64>, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk("two_zone", method, seeds, out);
    cfg.epochs = 2;
    cfg.horizon = Some(25);
    cfg.checkpoint_every = 1;
    cfg.pma.steps_per_epoch = 100;
    cfg.classic.steps_per_epoch = 100;
    cfg.pma.model_steps = 8;
    cfg.classic.model_steps = 8;
    cfg.pma.policy_steps = 8;
    cfg.classic.policy_steps = 8;
    cfg.eval.mppi = MppiConfig { horizon: 4, population: 16, iterations: 2, ..MppiConfig::default() };
    cfg.eval.mbpo =
        MbpoConfig { epochs: 1, steps_per_epoch: 40, policy_steps: 4, hidden: vec![8, 8], ..MbpoConfig::default() };
    cfg.eval.mbpo.sac.batch_size = 16;
    cfg
}

fn eval(
    dir: &Path,
    task: &str,
    lambdas: Vec<f64>,
    seeds: Vec<u64>,
) -> pma_lab::Result<pma_lab::experiment::EvalOutcome> {
    evaluate_run(dir, &EvalRequest { planner: Planner::Mppi, task: task.into(), lambdas, seeds })
}

#[test]
fn zero_epochs_leaves_config_and_initial_checkpoint_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Method::Pma, vec![0], tmp.path());
    cfg.epochs = 0;
    let dir = pretrain(&cfg).unwrap().remove(0);
    assert!(dir.join("config.json").is_file());
    assert!(!dir.join("metrics.jsonl").exists());
    let record = RunRecord::load(&dir).unwrap();
    assert_eq!(record.epochs_completed, 0);
    assert_eq!(record.env_steps, 0);
    let ckpts: Vec<_> = fs::read_dir(dir.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts, vec![std::ffi::OsString::from("epoch-0000")]);
    let art = Artifacts::load(&record.final_checkpoint(&dir).unwrap()).unwrap();
    assert_eq!(art.epoch, 0);
    assert!(art.decoder.is_some());
}

#[test]
fn run_directory_layout_and_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(Method::ClassicRandom, vec![4], tmp.path());
    let dir = pretrain(&cfg).unwrap().remove(0);
    assert_eq!(dir, tmp.path().join("classic_random-two_zone-seed4"));
    let record = RunRecord::load(&dir).unwrap();
    assert_eq!(record.epochs_completed, 2);
    assert_eq!(record.env_steps, cfg.budget_steps());
    let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for epoch in ["epoch-0000", "epoch-0001", "epoch-0002"] {
        assert!(dir.join("checkpoints").join(epoch).join("manifest.json").is_file(), "{epoch}");
    }
    let last = Artifacts::load(&record.final_checkpoint(&dir).unwrap()).unwrap();
    assert!(last.replay.as_ref().is_some_and(|r| !r.is_empty()));
    let first = Artifacts::load(&dir.join("checkpoints/epoch-0000")).unwrap();
    assert!(first.replay.is_none());
}

#[test]
fn lambda_sweep_gives_one_row_per_coefficient_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pretrain(&small(Method::Pma, vec![1], tmp.path())).unwrap().remove(0);
    let out = eval(&dir, "west", DEFAULT_LAMBDAS.to_vec(), vec![0, 1]).unwrap();
    assert_eq!(out.rows.len(), 2 * DEFAULT_LAMBDAS.len());
    for seed in [0, 1] {
        let lambdas: Vec<f64> = out.rows.iter().filter(|r| r.seed == seed).map(|r| r.lambda).collect();
        assert_eq!(lambdas, DEFAULT_LAMBDAS.to_vec());
    }
    assert_eq!(out.env_steps, out.rows.iter().map(|r| r.steps as u64).sum::<u64>());
    assert_eq!(load_eval_rows(&dir).unwrap(), out.rows);
    assert_eq!(out.file, dir.join("eval").join("mppi-west.jsonl"));
}

#[test]
fn evaluation_rejects_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pretrain(&small(Method::ClassicRandom, vec![0], tmp.path())).unwrap().remove(0);
    let err = eval(&dir, "sideways", vec![0.0], vec![0]).unwrap_err();
    assert!(matches!(err, Error::UnknownTask { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(eval(&dir, "east", vec![-1.0], vec![0]).is_err());
    assert!(eval(&dir, "east", vec![0.0], vec![]).is_err());
    assert!(!dir.join("eval").exists());
}

#[test]
fn repeated_evaluation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pretrain(&small(Method::ClassicRandom, vec![2], tmp.path())).unwrap().remove(0);
    let a = eval(&dir, "north", vec![0.0, 5.0], vec![3]).unwrap();
    let b = eval(&dir, "north", vec![0.0, 5.0], vec![3]).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn sac_full_and_mbpo_run_zero_shot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pretrain(&small(Method::Pma, vec![0], tmp.path())).unwrap().remove(0);
    for planner in [Planner::Mbpo, Planner::SacFull] {
        let req = EvalRequest { planner, task: "east".into(), lambdas: vec![1.0], seeds: vec![0] };
        let out = evaluate_run(&dir, &req).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].steps, 25);
        assert_eq!(out.env_steps, 25);
    }
    let sac_full = MbpoConfig::default().sac_full(25);
    assert_eq!((sac_full.rollout_horizon, sac_full.reset_prob), (25, 1.0));
}

#[test]
fn classic_on_pma_data_reuses_the_source_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let source = pretrain(&small(Method::Pma, vec![5], tmp.path())).unwrap().remove(0);
    let mut cfg = small(Method::ClassicPmaData, vec![5], tmp.path());
    cfg.pma_data_source = Some(tmp.path().to_path_buf());
    let dir = pretrain(&cfg).unwrap().remove(0);
    let src = RunRecord::load(&source).unwrap();
    let rec = RunRecord::load(&dir).unwrap();
    assert_eq!(rec.env_steps, src.env_steps);
    check_fair_budget(&[src, rec]).unwrap();

    let mut missing = small(Method::ClassicPmaData, vec![9], tmp.path());
    missing.pma_data_source = Some(tmp.path().to_path_buf());
    assert!(pretrain(&missing).is_err());
}

#[test]
fn report_groups_sorts_and_audits_budgets() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs: Vec<PathBuf> = Vec::new();
    for method in [Method::Pma, Method::ClassicRandom] {
        dirs.extend(pretrain(&small(method, vec![0, 1], tmp.path())).unwrap());
    }
    for d in &dirs {
        eval(d, "west", vec![0.0, 5.0], vec![0]).unwrap();
        eval(d, "east", vec![0.0], vec![0]).unwrap();
    }
    let rows = build_report(&dirs).unwrap();
    // (task, method) groups: east x 2 methods x 1 lambda, west x 2 x 2
    assert_eq!(rows.len(), 6);
    let keys: Vec<(String, Method)> = rows.iter().map(|r| (r.task.clone(), r.method)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for r in &rows {
        assert!((r.exploitation_gap - (r.mean_predicted - r.mean_true)).abs() < 1e-12);
        assert!(r.ci95_true >= 0.0);
    }
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("method,task,planner,lambda,mean_true,ci95_true,mean_predicted,exploitation_gap"));
    assert_eq!(text.lines().count(), 7);

    // a third PMA run breaks the equal-budget audit
    let extra = pretrain(&small(Method::Pma, vec![2], tmp.path())).unwrap();
    dirs.extend(extra);
    let err = build_report(&dirs).unwrap_err();
    assert!(matches!(err, Error::Audit(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}
