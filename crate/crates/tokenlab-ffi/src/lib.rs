//! C interface to `tokenlab`.
//!
//! Every fallible function returns a [`LabStatus`]. On failure the message
//! is kept per thread and can be read with [`lab_last_error`]. Handles are
//! opaque pointers created by `*_new` functions and released with the
//! matching `*_free`; passing null to a `*_free` function is a no-op.
//! Panics never cross the boundary: they are reported as
//! [`LabStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenlab::data_model::{sample_batch, Featurizer, Sample, TaskConfig};
use tokenlab::losses::{prox, LossKind, LossSpec};
use tokenlab::numerics::{gaussian_tail_moment2, normal_cdf};
use tokenlab::theory_errors::{
    capacity, limit_optimal_error, pooled_theory, vectorized_theory, LimitQuery, Model,
};
use tokenlab::theory_two_step::{predict, Convention};
use tokenlab::training::StepSchedule;
use tokenlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Readout models, passed as `int32_t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabModel {
    Pooled = 0,
    Vectorized = 1,
    Attention = 2,
    ApproxAttention = 3,
}

/// Losses, passed as `int32_t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabLoss {
    Logistic = 0,
    Quadratic = 1,
}

/// Feature maps, passed as `int32_t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabFeatures {
    Pooled = 0,
    Vectorized = 1,
    Attention = 2,
}

/// Task parameters and signal direction.
pub struct LabTask(TaskConfig);

/// Seeded random generator.
pub struct LabRng(ChaCha8Rng);

/// Labeled sequences drawn from a task.
pub struct LabBatch {
    l: usize,
    d: usize,
    samples: Vec<Sample>,
}

/// State-equation solution of a linear readout.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LabTheory {
    pub mu1: f64,
    pub mu2: f64,
    pub b: f64,
    pub nu: f64,
    pub chi: f64,
    pub mu3: f64,
    pub e_test: f64,
    pub e_train: f64,
    pub converged: bool,
}

/// Predicted statistics after the two gradient steps.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LabTwoStep {
    pub b1: f64,
    pub s_w: f64,
    pub s_q: f64,
    pub q2_norm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LabStatus, msg: impl Into<String>) -> LabStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> LabStatus {
    match e {
        Error::Parameter(_) | Error::Config { .. } => LabStatus::InvalidArgument,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => LabStatus::Io,
        _ => LabStatus::Numeric,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard<F: FnOnce() -> Result<(), LabStatus>>(f: F) -> LabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LabStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_owned());
            fail(LabStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: tokenlab::Result<T>) -> Result<T, LabStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), LabStatus> {
    if p.is_null() {
        Err(fail(LabStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn model_of(m: i32) -> Result<Model, LabStatus> {
    match m {
        0 => Ok(Model::Pooled),
        1 => Ok(Model::Vectorized),
        2 => Ok(Model::Attention),
        3 => Ok(Model::ApproxAttention),
        _ => Err(fail(LabStatus::InvalidArgument, format!("unknown model {m}"))),
    }
}

fn loss_of(l: i32) -> Result<LossSpec, LabStatus> {
    match l {
        0 => Ok(LossSpec::new(LossKind::Logistic)),
        1 => Ok(LossSpec::new(LossKind::Quadratic)),
        _ => Err(fail(LabStatus::InvalidArgument, format!("unknown loss {l}"))),
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn lab_normal_cdf(x: f64) -> f64 {
    normal_cdf(x)
}

#[no_mangle]
pub extern "C" fn lab_gaussian_tail_moment2(a: f64) -> f64 {
    gaussian_tail_moment2(a)
}

/// Proximal map of `gamma·loss(·, y)` at `x`.
///
/// # Safety
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn lab_prox(loss: i32, y: f64, x: f64, gamma: f64, out: *mut f64) -> LabStatus {
    guard(|| {
        nonnull(out, "out")?;
        let v = lift(prox(loss_of(loss)?, y, x, gamma))?;
        // SAFETY: checked non-null; the caller guarantees validity.
        unsafe { *out = v };
        Ok(())
    })
}

/// Creates a task with `ξ = e₁` and uniform token locations.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn lab_task_new(l: usize, r: usize, theta: f64, pi: f64, d: usize, out: *mut *mut LabTask) -> LabStatus {
    guard(|| {
        nonnull(out, "out")?;
        let t = lift(TaskConfig::new(l, r, theta, pi, d))?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(LabTask(t))) };
        Ok(())
    })
}

/// # Safety
/// `task` must come from [`lab_task_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lab_task_free(task: *mut LabTask) {
    if !task.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(task) });
    }
}

/// `θR/√L`.
///
/// # Safety
/// `task` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_task_pooled_snr(task: *const LabTask, out: *mut f64) -> LabStatus {
    guard(|| {
        nonnull(task, "task")?;
        nonnull(out, "out")?;
        // SAFETY: checked non-null; the caller guarantees liveness.
        unsafe { *out = (*task).0.pooled_snr() };
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn lab_rng_new(seed: u64, out: *mut *mut LabRng) -> LabStatus {
    guard(|| {
        nonnull(out, "out")?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(LabRng(ChaCha8Rng::seed_from_u64(seed)))) };
        Ok(())
    })
}

/// # Safety
/// `rng` must come from [`lab_rng_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lab_rng_free(rng: *mut LabRng) {
    if !rng.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(rng) });
    }
}

/// Draws `n` samples.
///
/// # Safety
/// `task` and `rng` must be live handles, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_batch_sample(task: *const LabTask, rng: *mut LabRng, n: usize, out: *mut *mut LabBatch) -> LabStatus {
    guard(|| {
        nonnull(task, "task")?;
        nonnull(rng, "rng")?;
        nonnull(out, "out")?;
        // SAFETY: checked non-null; distinct handles by contract.
        let (t, g) = unsafe { (&(*task).0, &mut (*rng).0) };
        let samples = lift(sample_batch(t, n, g))?;
        let b = LabBatch {
            l: t.l,
            d: t.d,
            samples,
        };
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(b)) };
        Ok(())
    })
}

/// # Safety
/// `batch` must come from [`lab_batch_sample`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lab_batch_free(batch: *mut LabBatch) {
    if !batch.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(batch) });
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lab_batch_len(batch: *const LabBatch) -> usize {
    if batch.is_null() {
        0
    } else {
        // SAFETY: non-null live handle.
        unsafe { (*batch).samples.len() }
    }
}

/// Copies sample `index` into `x` (`L·d` doubles, row-major) and its label
/// into `y`.
///
/// # Safety
/// `x` must hold `len` doubles and `y` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_batch_get(batch: *const LabBatch, index: usize, x: *mut f64, len: usize, y: *mut i8) -> LabStatus {
    guard(|| {
        nonnull(batch, "batch")?;
        nonnull(x, "x")?;
        nonnull(y, "y")?;
        // SAFETY: checked non-null live handle.
        let b = unsafe { &*batch };
        let s = b
            .samples
            .get(index)
            .ok_or_else(|| fail(LabStatus::InvalidArgument, format!("index {index} out of range")))?;
        if len < b.l * b.d {
            return Err(fail(LabStatus::BufferTooSmall, format!("need {} doubles", b.l * b.d)));
        }
        // SAFETY: the caller guarantees `len` writable doubles.
        unsafe {
            ptr::copy_nonoverlapping(s.x.as_ptr(), x, s.x.len());
            *y = s.y;
        }
        Ok(())
    })
}

/// Features of sample `index`. `q` (length `d`) and `beta` are read for the
/// attention map only; `q` may be null otherwise. Writes `d` doubles, or
/// `L·d` for the vectorized map.
///
/// # Safety
/// `q` must hold `d` doubles when used and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lab_batch_features(
    batch: *const LabBatch,
    index: usize,
    kind: i32,
    q: *const f64,
    beta: f64,
    out: *mut f64,
    len: usize,
) -> LabStatus {
    guard(|| {
        nonnull(batch, "batch")?;
        nonnull(out, "out")?;
        // SAFETY: checked non-null live handle.
        let b = unsafe { &*batch };
        let f = match kind {
            0 => Featurizer::pooled(b.l, b.d),
            1 => Featurizer::vectorized(b.l, b.d),
            2 => {
                nonnull(q, "q")?;
                // SAFETY: the caller guarantees `d` readable doubles.
                let qv = unsafe { std::slice::from_raw_parts(q, b.d) }.to_vec();
                Featurizer::attention(b.l, b.d, qv, beta)
            }
            _ => return Err(fail(LabStatus::InvalidArgument, format!("unknown feature map {kind}"))),
        };
        let s = b
            .samples
            .get(index)
            .ok_or_else(|| fail(LabStatus::InvalidArgument, format!("index {index} out of range")))?;
        if len < f.dim() {
            return Err(fail(LabStatus::BufferTooSmall, format!("need {} doubles", f.dim())));
        }
        // SAFETY: the caller guarantees `len ≥ dim` writable doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, f.dim()) };
        lift(f.apply_into(&s.x, dst))
    })
}

/// Limit of the optimal test error. `value` is NaN when only the
/// `strictly_positive` flag is known. Pass `INFINITY` for an infinite SNR
/// and a negative `attention_ratio` to leave it unset.
///
/// # Safety
/// `value` and `strictly_positive` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn lab_limit_optimal_error(
    model: i32,
    snr: f64,
    pi: f64,
    attention_ratio: f64,
    value: *mut f64,
    strictly_positive: *mut bool,
) -> LabStatus {
    guard(|| {
        nonnull(value, "value")?;
        nonnull(strictly_positive, "strictly_positive")?;
        let q = LimitQuery {
            model: model_of(model)?,
            snr,
            pi,
            attention_ratio: (attention_ratio >= 0.0).then_some(attention_ratio),
        };
        let r = lift(limit_optimal_error(&q))?;
        // SAFETY: checked non-null.
        unsafe {
            *value = r.value.unwrap_or(f64::NAN);
            *strictly_positive = r.strictly_positive;
        }
        Ok(())
    })
}

/// Predicted separability threshold of the pooled or vectorized readout.
///
/// # Safety
/// `task` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_capacity(model: i32, task: *const LabTask, out: *mut f64) -> LabStatus {
    guard(|| {
        nonnull(task, "task")?;
        nonnull(out, "out")?;
        let m = model_of(model)?;
        if !matches!(m, Model::Pooled | Model::Vectorized) {
            return Err(fail(LabStatus::InvalidArgument, "only pooled and vectorized thresholds are exposed"));
        }
        // SAFETY: checked non-null live handle.
        let r = lift(capacity(m, unsafe { &(*task).0 }, None))?;
        // SAFETY: checked non-null.
        unsafe { *out = r.alpha_star };
        Ok(())
    })
}

/// State-equation solution of the pooled or vectorized readout at sample
/// ratio `alpha1 = n/d`.
///
/// # Safety
/// `task` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_linear_theory(
    model: i32,
    task: *const LabTask,
    alpha1: f64,
    lambda: f64,
    loss: i32,
    out: *mut LabTheory,
) -> LabStatus {
    guard(|| {
        nonnull(task, "task")?;
        nonnull(out, "out")?;
        // SAFETY: checked non-null live handle.
        let t = unsafe { &(*task).0 };
        let loss = loss_of(loss)?;
        let s = match model_of(model)? {
            Model::Pooled => lift(pooled_theory(t, alpha1, lambda, loss))?,
            Model::Vectorized => lift(vectorized_theory(t, alpha1, lambda, loss))?.theory,
            _ => return Err(fail(LabStatus::InvalidArgument, "attention needs the scalar law; use the Rust API")),
        };
        let v = LabTheory {
            mu1: s.mu1,
            mu2: s.mu2,
            b: s.b_hat,
            nu: s.nu,
            chi: s.chi,
            mu3: s.mu3,
            e_test: s.e_test,
            e_train: s.e_train,
            converged: s.converged,
        };
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// Predicted bias and cosines after the two gradient steps, with a shared
/// learning rate `eta`. `exact` selects the simulation-matched convention.
///
/// # Safety
/// `task` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn lab_two_step_predict(
    task: *const LabTask,
    eta: f64,
    beta: f64,
    alpha0: f64,
    loss: i32,
    exact: bool,
    out: *mut LabTwoStep,
) -> LabStatus {
    guard(|| {
        nonnull(task, "task")?;
        nonnull(out, "out")?;
        let schedule = StepSchedule {
            eta_b: eta,
            eta_w: eta,
            eta_q: eta,
            beta,
            lambda: 0.0,
            alpha0,
            alpha1: 1.0,
        };
        let conv = if exact { Convention::Exact } else { Convention::Literal };
        // SAFETY: checked non-null live handle.
        let p = lift(predict(&schedule, loss_of(loss)?, unsafe { &(*task).0 }, alpha0, conv))?;
        // SAFETY: checked non-null.
        unsafe {
            *out = LabTwoStep {
                b1: p.b1,
                s_w: p.s_w,
                s_q: p.s_q,
                q2_norm: p.q2_norm,
            }
        };
        Ok(())
    })
}
