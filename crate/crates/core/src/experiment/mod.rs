//! Experiment orchestration: configs, pretraining runs, checkpoints,
//! zero-shot evaluation and reports.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod run;

pub use checkpoint::{Artifacts, Manifest};
pub use config::{
    EvalConfig, ExperimentConfig, Method, Planner, ProbeConfig, DEFAULT_LAMBDAS, DESK_EPOCHS, SCHEMA_VERSION,
};
pub use evaluate::{
    evaluate_run, held_out_model_error, held_out_transitions, load_eval_rows, run_episode, EvalOutcome, EvalRequest,
    EvalRow,
};
pub use report::{build_report, check_fair_budget, write_csv, ReportRow};
pub use run::{pretrain, pretrain_seed, thread_pool, ProbeRow, RunRecord, CODE_HASH, THREADS_VAR};
