//! C ABI over `pma_lab`.
//!
//! Every function returns a [`PmaStatus`]; on failure a description is kept in
//! thread-local storage and can be copied out with [`pma_last_error`].
//! Objects cross the boundary as opaque handles that the caller frees.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::slice;

use ndarray::Array2;
use pma_lab::envs::Env;
use pma_lab::experiment::{evaluate_run, Artifacts, EvalRequest, Planner};
use pma_lab::math::RngStream;
use pma_lab::tabular::{sweep, SweepConfig};
use pma_lab::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmaStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Audit = 3,
    Io = 4,
    InvalidArgument = 5,
    MissingCheckpoint = 6,
    Internal = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> PmaStatus {
    match err {
        Error::Config { .. } | Error::UnknownTask { .. } | Error::UnknownEnv(_) => PmaStatus::Config,
        Error::Audit(_) | Error::BoundViolation(_) => PmaStatus::Audit,
        Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => PmaStatus::Io,
        Error::MissingCheckpoint(_) => PmaStatus::MissingCheckpoint,
        Error::Contract(_) | Error::UnsupportedSize(_) | Error::EmptyBatch(_) => PmaStatus::InvalidArgument,
        _ => PmaStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PmaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PmaStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PmaStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            PmaStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside pma-lab".to_owned());
            PmaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    Ok(Path::new(str_arg(p, what)?).to_path_buf())
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pma_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// A loaded pretraining checkpoint.
pub struct PmaModel {
    artifacts: Artifacts,
}

/// Loads the checkpoint stored in directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_model_load(dir: *const c_char, out: *mut *mut PmaModel) -> PmaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let artifacts = Artifacts::load(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(PmaModel { artifacts }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from [`pma_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pma_model_free(model: *mut PmaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the state and control dimensions. Controls are latent actions for
/// latent-action checkpoints and raw actions otherwise.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_model_dims(
    model: *const PmaModel,
    state_dim: *mut usize,
    control_dim: *mut usize,
) -> PmaStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let planning = m.artifacts.planning_model()?;
        *out_ref(state_dim, "state_dim")? = planning.state_dim();
        *out_ref(control_dim, "control_dim")? = planning.control_dim();
        Ok(())
    })
}

/// Predicts the next state for each of `rows` (state, control) pairs and
/// the uncertainty penalty scaled by `lambda`. Arrays are row-major.
/// `penalties` may be null.
///
/// # Safety
/// Buffers must hold `rows * dim` values for the respective dimension and
/// `penalties`, when non-null, `rows` values.
#[no_mangle]
pub unsafe extern "C" fn pma_model_predict(
    model: *const PmaModel,
    rows: usize,
    states: *const f64,
    controls: *const f64,
    lambda: f64,
    next_states: *mut f64,
    penalties: *mut f64,
) -> PmaStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let planning = m.artifacts.planning_model()?;
        let (sd, cd) = (planning.state_dim(), planning.control_dim());
        let s = in_slice(states, rows * sd, "states")?;
        let c = in_slice(controls, rows * cd, "controls")?;
        let s = Array2::from_shape_vec((rows, sd), s.to_vec()).map_err(|e| Failure::Invalid(e.to_string()))?;
        let c = Array2::from_shape_vec((rows, cd), c.to_vec()).map_err(|e| Failure::Invalid(e.to_string()))?;
        let (next, pen) = planning.predict(s.view(), c.view(), lambda)?;
        let out = out_slice(next_states, rows * sd, "next_states")?;
        for (o, v) in out.iter_mut().zip(next.iter()) {
            *o = *v;
        }
        if !penalties.is_null() {
            slice::from_raw_parts_mut(penalties, rows).copy_from_slice(&pen);
        }
        Ok(())
    })
}

/// Environment action executed for `control` at `state`. `action` must hold
/// `action_dim` values, the action dimension of the checkpoint's
/// environment.
///
/// # Safety
/// `state` and `control` must hold the sizes reported by [`pma_model_dims`].
#[no_mangle]
pub unsafe extern "C" fn pma_model_env_action(
    model: *const PmaModel,
    state: *const f64,
    control: *const f64,
    action: *mut f64,
    action_dim: usize,
) -> PmaStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let planning = m.artifacts.planning_model()?;
        let s = in_slice(state, planning.state_dim(), "state")?;
        let c = in_slice(control, planning.control_dim(), "control")?;
        let a = planning.env_action(s, c)?;
        if a.len() != action_dim {
            return Err(Failure::Invalid(format!("action_dim is {action_dim}, environment uses {}", a.len())));
        }
        out_slice(action, action_dim, "action")?.copy_from_slice(&a);
        Ok(())
    })
}

/// A simulator instance with its own random stream.
pub struct PmaEnv {
    env: Env,
    rng: RngStream,
}

/// Creates environment `name` seeded with `seed`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_env_new(name: *const c_char, seed: u64, out: *mut *mut PmaEnv) -> PmaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let env = Env::make(str_arg(name, "name")?)?;
        let rng = RngStream::new(seed, "ffi-env");
        *out = Box::into_raw(Box::new(PmaEnv { env, rng }));
        Ok(())
    })
}

/// Releases an environment handle; null is ignored.
///
/// # Safety
/// `env` must come from [`pma_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pma_env_free(env: *mut PmaEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Writes the state and action dimensions and the episode length.
///
/// # Safety
/// `env` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_env_dims(
    env: *const PmaEnv,
    state_dim: *mut usize,
    action_dim: *mut usize,
    horizon: *mut usize,
) -> PmaStatus {
    guard(|| {
        let e = &env.as_ref().ok_or(Failure::Null("env"))?.env;
        *out_ref(state_dim, "state_dim")? = e.state_dim();
        *out_ref(action_dim, "action_dim")? = e.action_dim();
        *out_ref(horizon, "horizon")? = e.horizon();
        Ok(())
    })
}

/// Samples an initial state.
///
/// # Safety
/// `state` must hold `state_dim` writable values.
#[no_mangle]
pub unsafe extern "C" fn pma_env_reset(env: *mut PmaEnv, state: *mut f64) -> PmaStatus {
    guard(|| {
        let h = env.as_mut().ok_or(Failure::Null("env"))?;
        let s = h.env.reset(&mut h.rng);
        out_slice(state, s.len(), "state")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Advances one step from `state` with `action`, scoring it under `task`.
///
/// # Safety
/// `state` and `next_state` must hold `state_dim` values, `action`
/// `action_dim` values; `task` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pma_env_step(
    env: *mut PmaEnv,
    task: *const c_char,
    state: *const f64,
    action: *const f64,
    next_state: *mut f64,
    reward: *mut f64,
    done: *mut bool,
) -> PmaStatus {
    guard(|| {
        let h = env.as_mut().ok_or(Failure::Null("env"))?;
        let task = str_arg(task, "task")?;
        h.env.check_task(task)?;
        let s = in_slice(state, h.env.state_dim(), "state")?;
        let a = in_slice(action, h.env.action_dim(), "action")?;
        let (next, finished) = h.env.step(s, a, &mut h.rng)?;
        let r = h.env.task_reward(task, s, a, &next)?;
        out_slice(next_state, next.len(), "next_state")?.copy_from_slice(&next);
        *out_ref(reward, "reward")? = r;
        *out_ref(done, "done")? = finished;
        Ok(())
    })
}

/// Runs one zero-shot evaluation episode of the run in `run_dir` and
/// appends it to the run's evaluation log. `planner` is one of `mppi`,
/// `mbpo` or `sac_full`.
///
/// # Safety
/// String arguments must be NUL-terminated; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_evaluate_episode(
    run_dir: *const c_char,
    planner: *const c_char,
    task: *const c_char,
    lambda: f64,
    seed: u64,
    predicted_return: *mut f64,
    true_return: *mut f64,
) -> PmaStatus {
    guard(|| {
        let dir = path_arg(run_dir, "run_dir")?;
        let planner: Planner = str_arg(planner, "planner")?.parse()?;
        let req =
            EvalRequest { planner, task: str_arg(task, "task")?.to_owned(), lambdas: vec![lambda], seeds: vec![seed] };
        let predicted_return = out_ref(predicted_return, "predicted_return")?;
        let true_return = out_ref(true_return, "true_return")?;
        let outcome = evaluate_run(&dir, &req)?;
        let row = &outcome.rows[0];
        *predicted_return = row.predicted_return;
        *true_return = row.true_return;
        Ok(())
    })
}

/// Checks the tabular performance bounds on `instances` random problems
/// and writes the smallest slack found. Violations return `Audit`.
///
/// # Safety
/// `worst_slack` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pma_tabular_verify(
    instances: usize,
    max_states: usize,
    max_actions: usize,
    n_latent: usize,
    gamma: f64,
    seed: u64,
    worst_slack: *mut f64,
) -> PmaStatus {
    guard(|| {
        let out = out_ref(worst_slack, "worst_slack")?;
        let cfg = SweepConfig { instances, max_states, max_actions, n_latent, gamma, seed };
        let rows = sweep(&cfg)?;
        *out = rows.iter().map(|r| r.report.worst_slack()).fold(f64::INFINITY, f64::min);
        Ok(())
    })
}
