//! C ABI over `tempo_embed`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free`. Every fallible call returns a [`TeStatus`] code and
//! writes its result through an out-pointer; on failure the message is
//! available from [`te_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tempo_embed::evaluation::sequential_evaluate;
use tempo_embed::graphdata::{chronological_split, load_csv};
use tempo_embed::synthgen::{self, Type4Params};
use tempo_embed::tbatcher::build_batches;
use tempo_embed::trainer::train;
use tempo_embed::{BatchPlan, Checkpoint, Error, InteractionLog, LossKind, TrainConfig};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numeric = 5,
    Config = 6,
    Panic = 7,
}

/// Loss selector for [`TeTrainConfig`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeLoss {
    Tbatch = 0,
    ItemSum = 1,
    FullSum = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TeTrainConfig {
    pub loss: TeLoss,
    pub epochs: usize,
    pub dim: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub span_size: usize,
    pub lambda_u: f64,
    pub lambda_i: f64,
    pub grad_clip: f64,
}

/// Opaque interaction log.
pub struct TeLog(InteractionLog);

/// Opaque t-batch plan.
pub struct TePlan(BatchPlan);

/// Opaque trained model plus its embedding state.
pub struct TeCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TeStatus {
    match e {
        Error::Parse { .. } | Error::Schema { .. } | Error::Json(_) => TeStatus::Parse,
        Error::Io { .. } | Error::Checkpoint(_) => TeStatus::Io,
        Error::Numeric(_) | Error::NonFiniteLoss { .. } | Error::Trace(_) => TeStatus::Numeric,
        Error::Config(_) | Error::Dimension { .. } => TeStatus::Config,
        _ => TeStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (TeStatus, String)>) -> TeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            TeStatus::Panic
        }
    }
}

fn lift<T>(r: tempo_embed::Result<T>) -> Result<T, (TeStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (TeStatus, String) {
    (TeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (TeStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (TeStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (TeStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (TeStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), (TeStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn te_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_log_load_csv(
    path: *const c_char,
    has_header: bool,
    out: *mut *mut TeLog,
) -> TeStatus {
    guard(|| {
        let path = path_arg(path)?;
        let log = lift(load_csv(&path, has_header))?;
        put(out, TeLog(log))
    })
}

/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_log_generate_type1(
    k: usize,
    p: f64,
    seed: u64,
    out: *mut *mut TeLog,
) -> TeStatus {
    guard(|| put(out, TeLog(lift(synthgen::gen_type1(k, p, seed))?)))
}

/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_log_generate_type2(
    n_pairs: usize,
    repetitions: usize,
    out: *mut *mut TeLog,
) -> TeStatus {
    guard(|| {
        put(
            out,
            TeLog(lift(synthgen::gen_type2(n_pairs, repetitions, 0))?),
        )
    })
}

/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_log_generate_type4(
    n_users: usize,
    n_items: usize,
    k_out: usize,
    p_jump: f64,
    arrival_rate: f64,
    n_interactions: usize,
    seed: u64,
    out: *mut *mut TeLog,
) -> TeStatus {
    guard(|| {
        let params = Type4Params {
            n_users,
            n_items,
            k_out,
            p_jump,
            arrival_rate,
            n_interactions,
        };
        put(out, TeLog(lift(synthgen::gen_type4(&params, seed))?.0))
    })
}

/// Splits `log` chronologically; the first `train_fraction` goes to `out_train`.
///
/// # Safety
/// `log` must be a live handle; both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn te_log_split(
    log: *const TeLog,
    train_fraction: f64,
    out_train: *mut *mut TeLog,
    out_test: *mut *mut TeLog,
) -> TeStatus {
    guard(|| {
        let log = deref(log, "log")?;
        if out_train.is_null() || out_test.is_null() {
            return Err(null("out"));
        }
        let (train, test) = lift(chronological_split(&log.0, train_fraction))?;
        put(out_train, TeLog(train))?;
        put(out_test, TeLog(test))
    })
}

/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_log_len(log: *const TeLog, out: *mut usize) -> TeStatus {
    guard(|| write(out, deref(log, "log")?.0.len()))
}

/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_log_num_users(log: *const TeLog, out: *mut usize) -> TeStatus {
    guard(|| write(out, deref(log, "log")?.0.num_users()))
}

/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_log_num_items(log: *const TeLog, out: *mut usize) -> TeStatus {
    guard(|| write(out, deref(log, "log")?.0.num_items()))
}

/// # Safety
/// `log` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_log_free(log: *mut TeLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// # Safety
/// `log` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_plan_build(log: *const TeLog, out: *mut *mut TePlan) -> TeStatus {
    guard(|| put(out, TePlan(build_batches(&deref(log, "log")?.0))))
}

/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_plan_num_batches(plan: *const TePlan, out: *mut usize) -> TeStatus {
    guard(|| write(out, deref(plan, "plan")?.0.len()))
}

/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_plan_batch_size(
    plan: *const TePlan,
    index: usize,
    out: *mut usize,
) -> TeStatus {
    guard(|| {
        let plan = deref(plan, "plan")?;
        let batch = plan.0.batches().get(index).ok_or_else(|| {
            (
                TeStatus::InvalidArgument,
                format!("batch {index} out of range"),
            )
        })?;
        write(out, batch.len())
    })
}

/// Copies the interaction indices of batch `index` into `buf` (capacity
/// `cap`) and stores the batch size in `out_len`. Fails if `cap` is too small.
///
/// # Safety
/// `plan` must be a live handle, `buf` valid for `cap` writes, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn te_plan_batch(
    plan: *const TePlan,
    index: usize,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> TeStatus {
    guard(|| {
        let plan = deref(plan, "plan")?;
        let batch = plan.0.batches().get(index).ok_or_else(|| {
            (
                TeStatus::InvalidArgument,
                format!("batch {index} out of range"),
            )
        })?;
        write(out_len, batch.len())?;
        if batch.len() > cap {
            return Err((
                TeStatus::InvalidArgument,
                format!("buffer holds {cap}, batch has {}", batch.len()),
            ));
        }
        if buf.is_null() && !batch.is_empty() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(batch.as_ptr(), buf, batch.len());
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_plan_free(plan: *mut TePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Library defaults for every training field.
#[no_mangle]
pub extern "C" fn te_train_config_default() -> TeTrainConfig {
    let d = TrainConfig::default();
    TeTrainConfig {
        loss: TeLoss::Tbatch,
        epochs: d.epochs,
        dim: d.d,
        seed: d.seed,
        learning_rate: d.learning_rate,
        weight_decay: d.weight_decay,
        span_size: d.span_size,
        lambda_u: d.lambda_u,
        lambda_i: d.lambda_i,
        grad_clip: d.grad_clip,
    }
}

fn to_config(c: &TeTrainConfig) -> TrainConfig {
    TrainConfig {
        loss_kind: match c.loss {
            TeLoss::Tbatch => LossKind::TBatch,
            TeLoss::ItemSum => LossKind::ItemSum,
            TeLoss::FullSum => LossKind::FullSum,
        },
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        weight_decay: c.weight_decay,
        span_size: c.span_size,
        seed: c.seed,
        d: c.dim,
        lambda_u: c.lambda_u,
        lambda_i: c.lambda_i,
        grad_clip: c.grad_clip,
    }
}

/// Trains on `log` and returns the final checkpoint.
///
/// # Safety
/// `log` and `config` must be valid pointers; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_train(
    log: *const TeLog,
    config: *const TeTrainConfig,
    out: *mut *mut TeCheckpoint,
) -> TeStatus {
    guard(|| {
        let log = deref(log, "log")?;
        let cfg = to_config(deref(config, "config")?);
        let (_, checkpoint) = lift(train(&log.0, &cfg, None))?;
        put(out, TeCheckpoint(checkpoint))
    })
}

/// Sequential evaluation of `checkpoint` on `test`.
///
/// # Safety
/// Handles must be live; `out_mrr` and `out_recall_at_10` writable.
#[no_mangle]
pub unsafe extern "C" fn te_evaluate(
    checkpoint: *const TeCheckpoint,
    test: *const TeLog,
    out_mrr: *mut f64,
    out_recall_at_10: *mut f64,
) -> TeStatus {
    guard(|| {
        let ck = deref(checkpoint, "checkpoint")?;
        let test = deref(test, "test")?;
        if out_mrr.is_null() || out_recall_at_10.is_null() {
            return Err(null("out"));
        }
        let m = lift(sequential_evaluate(&ck.0, &test.0))?;
        write(out_mrr, m.mrr)?;
        write(out_recall_at_10, m.recall_at_10)
    })
}

/// # Safety
/// `checkpoint` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn te_checkpoint_save(
    checkpoint: *const TeCheckpoint,
    path: *const c_char,
) -> TeStatus {
    guard(|| {
        let ck = deref(checkpoint, "checkpoint")?;
        lift(ck.0.save(&path_arg(path)?))
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_checkpoint_load(
    path: *const c_char,
    out: *mut *mut TeCheckpoint,
) -> TeStatus {
    guard(|| {
        let ck = lift(Checkpoint::load(&path_arg(path)?))?;
        put(out, TeCheckpoint(ck))
    })
}

/// # Safety
/// `checkpoint` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_checkpoint_free(checkpoint: *mut TeCheckpoint) {
    if !checkpoint.is_null() {
        drop(Box::from_raw(checkpoint));
    }
}
