//! C ABI over the core training loops: opaque handles, integer status
//! codes, POD configs. The header is generated by cbindgen into
//! `include/dizo.h` at build time.
//!
//! Conventions: every function returns a [`DizoStatus`]; results go to out
//! pointers; handles are freed with their `_free` function; string details
//! for the most recent error on the calling thread come from
//! [`dizo_last_error`]. No function unwinds across the boundary.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dizo_core::checkpoint::save_params;
use dizo_core::dizo::{build_anchor, dizo_run, ProjectionState};
use dizo_core::error::Error;
use dizo_core::harness::write_records_csv;
use dizo_core::models::{
    batch_tags, gaussian_blobs, token_sequences, AttentionTask, Batch, LogisticTask, LossOracle,
    MlpTask, QuadraticTask,
};
use dizo_core::optimizer::{zo_sgd_run, LrSchedule, RunOutput, TrainConfig};
use dizo_core::param::LayerRole;
use dizo_core::AnchorPrecision;

/// Result code of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DizoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    StructureError = 4,
    NumericError = 5,
    IoError = 6,
    FormatError = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DizoStatus {
    match err {
        Error::Config(_) => DizoStatus::ConfigError,
        Error::Structure(_) => DizoStatus::StructureError,
        Error::Numeric(_) => DizoStatus::NumericError,
        Error::Io(_) => DizoStatus::IoError,
        Error::Format(_) => DizoStatus::FormatError,
    }
}

fn fail(err: &Error) -> DizoStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn guard(body: impl FnOnce() -> DizoStatus) -> DizoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            DizoStatus::Panic
        }
    }
}

/// A loss oracle bundled with its dataset and the task's default
/// projection roles. Opaque.
pub struct DizoOracle {
    oracle: Box<dyn LossOracle>,
    data: Vec<Batch>,
    anchor_roles: BTreeSet<LayerRole>,
}

/// A finished run: records, final parameters, counters. Opaque.
pub struct DizoRun {
    output: RunOutput,
    layer_order: Vec<String>,
    projected: bool,
}

/// Training hyperparameters (POD mirror of the core config).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DizoTrainConfig {
    pub steps: u64,
    pub lr: f64,
    /// false = constant schedule, true = linear decay to zero.
    pub lr_linear_decay: bool,
    pub eps: f64,
    pub q: u64,
    pub batch_size: u64,
    pub seed: u64,
    pub eval_every: u64,
}

/// Projection hyperparameters for projected (DiZO) runs.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DizoProjectionConfig {
    /// Clip width τ in (0, 1).
    pub tau: f64,
    /// Projection cycle length in steps.
    pub kappa: u64,
    /// Smoothing scalar ε′ for γ-space probes.
    pub eps: f64,
    pub inner_iters: u64,
    pub inner_lr: f64,
    /// Store the anchor as 8-bit affine codes instead of f64.
    pub anchor_q8: bool,
}

/// One recorded iteration (per-layer detail is available via CSV export).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DizoRecord {
    pub iteration: u64,
    pub loss_clean: f64,
    pub loss_probe: f64,
    pub lr: f64,
    pub step_movement: f64,
    pub stability_slack: f64,
}

/// NUL-terminated version string of the library. Static; do not free.
#[no_mangle]
pub extern "C" fn dizo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message (NUL-terminated) into
/// `buf`. Returns the full message length in bytes excluding the NUL;
/// the copy is truncated if `cap` is too small. A zero `cap` only
/// measures.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be ignored when cap = 0).
#[no_mangle]
pub unsafe extern "C" fn dizo_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if cap > 0 && !buf.is_null() {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

unsafe fn write_out<T>(out: *mut T, value: T) -> DizoStatus {
    if out.is_null() {
        set_last_error("out pointer is null");
        return DizoStatus::NullPointer;
    }
    out.write(value);
    DizoStatus::Ok
}

fn new_oracle(
    oracle: Box<dyn LossOracle>,
    data: Vec<Batch>,
    anchor_roles: BTreeSet<LayerRole>,
    out: *mut *mut DizoOracle,
) -> DizoStatus {
    let handle = Box::new(DizoOracle {
        oracle,
        data,
        anchor_roles,
    });
    unsafe { write_out(out, Box::into_raw(handle)) }
}

/// Heterogeneous quadratic benchmark: four equal-dim layers whose optimum
/// radii span 10×, with a per-batch center jitter (0 for a deterministic
/// objective).
#[no_mangle]
pub extern "C" fn dizo_oracle_quadratic(
    dim_per_layer: u64,
    seed: u64,
    jitter: f64,
    n_batches: u64,
    out: *mut *mut DizoOracle,
) -> DizoStatus {
    guard(|| {
        let task = match QuadraticTask::heterogeneous_benchmark(dim_per_layer as usize, seed) {
            Ok(t) => t.with_jitter(jitter),
            Err(e) => return fail(&e),
        };
        let data = if jitter == 0.0 {
            vec![Batch::empty()]
        } else {
            batch_tags((n_batches as usize).max(1))
        };
        new_oracle(Box::new(task), data, [LayerRole::Other].into(), out)
    })
}

/// Multinomial logistic regression on Gaussian blobs.
#[no_mangle]
pub extern "C" fn dizo_oracle_logistic_blobs(
    features: u64,
    classes: u64,
    model_seed: u64,
    n_batches: u64,
    batch_size: u64,
    separation: f64,
    data_seed: u64,
    out: *mut *mut DizoOracle,
) -> DizoStatus {
    guard(|| {
        if features < 2 || n_batches == 0 || batch_size == 0 {
            set_last_error("features must be ≥ 2 and batch counts ≥ 1");
            return DizoStatus::InvalidArgument;
        }
        let task = match LogisticTask::new(features as usize, classes as usize, model_seed) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let data = gaussian_blobs(
            n_batches as usize,
            batch_size as usize,
            features as usize,
            classes as usize,
            separation,
            data_seed,
        );
        new_oracle(Box::new(task), data, [LayerRole::Dense].into(), out)
    })
}

/// Two-layer tanh MLP on Gaussian blobs.
#[no_mangle]
pub extern "C" fn dizo_oracle_mlp_blobs(
    features: u64,
    hidden: u64,
    classes: u64,
    model_seed: u64,
    n_batches: u64,
    batch_size: u64,
    separation: f64,
    data_seed: u64,
    out: *mut *mut DizoOracle,
) -> DizoStatus {
    guard(|| {
        if features < 2 || n_batches == 0 || batch_size == 0 {
            set_last_error("features must be ≥ 2 and batch counts ≥ 1");
            return DizoStatus::InvalidArgument;
        }
        let task = match MlpTask::new(
            features as usize,
            hidden as usize,
            classes as usize,
            model_seed,
        ) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let data = gaussian_blobs(
            n_batches as usize,
            batch_size as usize,
            features as usize,
            classes as usize,
            separation,
            data_seed,
        );
        new_oracle(Box::new(task), data, [LayerRole::Dense].into(), out)
    })
}

/// Single-block self-attention classifier on token sequences.
#[no_mangle]
pub extern "C" fn dizo_oracle_attention_tokens(
    d_model: u64,
    classes: u64,
    vocab: u64,
    seq_len: u64,
    model_seed: u64,
    n_batches: u64,
    batch_size: u64,
    data_seed: u64,
    out: *mut *mut DizoOracle,
) -> DizoStatus {
    guard(|| {
        if seq_len == 0 || n_batches == 0 || batch_size == 0 {
            set_last_error("seq_len and batch counts must be ≥ 1");
            return DizoStatus::InvalidArgument;
        }
        let task = match AttentionTask::new(
            d_model as usize,
            classes as usize,
            vocab as usize,
            model_seed,
        ) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let data = token_sequences(
            n_batches as usize,
            batch_size as usize,
            seq_len as usize,
            vocab as usize,
            classes as usize,
            data_seed,
        );
        new_oracle(
            Box::new(task),
            data,
            [LayerRole::AttnQ, LayerRole::AttnV].into(),
            out,
        )
    })
}

/// Total trainable parameter count of the oracle's model.
///
/// # Safety
/// `oracle` must be a live handle from a constructor; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_oracle_total_dim(
    oracle: *const DizoOracle,
    out: *mut u64,
) -> DizoStatus {
    guard(|| {
        let Some(handle) = (unsafe { oracle.as_ref() }) else {
            set_last_error("oracle is null");
            return DizoStatus::NullPointer;
        };
        let dim = handle.oracle.param_template().total_dim() as u64;
        unsafe { write_out(out, dim) }
    })
}

/// # Safety
/// `oracle` must come from a constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dizo_oracle_free(oracle: *mut DizoOracle) {
    if !oracle.is_null() {
        drop(unsafe { Box::from_raw(oracle) });
    }
}

fn core_train_config(config: &DizoTrainConfig) -> TrainConfig {
    TrainConfig {
        steps: config.steps as usize,
        lr: config.lr,
        lr_schedule: if config.lr_linear_decay {
            LrSchedule::LinearDecay
        } else {
            LrSchedule::Constant
        },
        eps: config.eps,
        q: config.q as usize,
        batch_size: config.batch_size as usize,
        seed: config.seed,
        eval_every: config.eval_every as usize,
    }
}

fn finish_run(
    output: RunOutput,
    layer_order: Vec<String>,
    projected: bool,
    out: *mut *mut DizoRun,
) -> DizoStatus {
    let run = Box::new(DizoRun {
        output,
        layer_order,
        projected,
    });
    unsafe { write_out(out, Box::into_raw(run)) }
}

/// Plain two-point ZO-SGD over the oracle's dataset.
///
/// # Safety
/// All pointers must be valid; the run handle must be freed with
/// `dizo_run_free`.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_zo_sgd(
    oracle: *const DizoOracle,
    config: *const DizoTrainConfig,
    out: *mut *mut DizoRun,
) -> DizoStatus {
    guard(|| {
        let (Some(handle), Some(config)) =
            (unsafe { oracle.as_ref() }, unsafe { config.as_ref() })
        else {
            set_last_error("oracle or config is null");
            return DizoStatus::NullPointer;
        };
        let init = handle.oracle.param_template();
        let tc = core_train_config(config);
        match zo_sgd_run(handle.oracle.as_ref(), &init, &handle.data, &tc, &mut |_| {}) {
            Ok(output) => finish_run(
                output,
                init.specs().map(|s| s.name().to_string()).collect(),
                false,
                out,
            ),
            Err(e) => fail(&e),
        }
    })
}

/// Projected run: ZO-SGD plus an anchor-based projection cycle every κ
/// steps. The anchor snapshots the task's default projection layers at
/// the initial parameters.
///
/// # Safety
/// All pointers must be valid; the run handle must be freed with
/// `dizo_run_free`.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_dizo(
    oracle: *const DizoOracle,
    config: *const DizoTrainConfig,
    projection: *const DizoProjectionConfig,
    out: *mut *mut DizoRun,
) -> DizoStatus {
    guard(|| {
        let (Some(handle), Some(config), Some(projection)) = (
            unsafe { oracle.as_ref() },
            unsafe { config.as_ref() },
            unsafe { projection.as_ref() },
        ) else {
            set_last_error("oracle, config, or projection is null");
            return DizoStatus::NullPointer;
        };
        let init = handle.oracle.param_template();
        let precision = if projection.anchor_q8 {
            AnchorPrecision::Q8
        } else {
            AnchorPrecision::F64
        };
        let anchor = match build_anchor(&init, &handle.anchor_roles, precision) {
            Ok(a) => a,
            Err(e) => return fail(&e),
        };
        let state = match ProjectionState::new(
            &anchor,
            projection.tau,
            projection.kappa as usize,
            projection.eps,
            projection.inner_iters as usize,
            projection.inner_lr,
        ) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let tc = core_train_config(config);
        match dizo_run(
            handle.oracle.as_ref(),
            &init,
            &handle.data,
            &tc,
            state,
            &anchor,
            &mut |_| {},
        ) {
            Ok(output) => finish_run(
                output,
                init.specs().map(|s| s.name().to_string()).collect(),
                true,
                out,
            ),
            Err(e) => fail(&e),
        }
    })
}

/// Number of recorded iterations.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_record_count(
    run: *const DizoRun,
    out: *mut usize,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        unsafe { write_out(out, run.output.records.len()) }
    })
}

/// Fetches record `index`.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_record(
    run: *const DizoRun,
    index: usize,
    out: *mut DizoRecord,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        let Some(rec) = run.output.records.get(index) else {
            set_last_error("record index out of range");
            return DizoStatus::InvalidArgument;
        };
        unsafe {
            write_out(
                out,
                DizoRecord {
                    iteration: rec.iteration as u64,
                    loss_clean: rec.loss_clean,
                    loss_probe: rec.loss_probe,
                    lr: rec.lr_used,
                    step_movement: rec.step_movement,
                    stability_slack: rec.stability_slack,
                },
            )
        }
    })
}

/// Clean loss of the last record.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_final_loss(run: *const DizoRun, out: *mut f64) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        match run.output.records.last() {
            Some(rec) => unsafe { write_out(out, rec.loss_clean) },
            None => {
                set_last_error("run has no records");
                DizoStatus::InvalidArgument
            }
        }
    })
}

/// Training forward passes the run consumed.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_forward_passes(
    run: *const DizoRun,
    out: *mut u64,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        unsafe { write_out(out, run.output.forward_passes) }
    })
}

/// Iterations whose movement exceeded the stability bound (0 on healthy
/// runs).
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_stability_violations(
    run: *const DizoRun,
    out: *mut u64,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        unsafe { write_out(out, run.output.stability_violations as u64) }
    })
}

/// Whether the run stopped early on a numeric failure.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_aborted(run: *const DizoRun, out: *mut bool) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        unsafe { write_out(out, run.output.aborted.is_some()) }
    })
}

unsafe fn path_from(ptr: *const c_char) -> Result<std::path::PathBuf, DizoStatus> {
    if ptr.is_null() {
        set_last_error("path is null");
        return Err(DizoStatus::NullPointer);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => {
            set_last_error("path is not valid utf-8");
            Err(DizoStatus::InvalidArgument)
        }
    }
}

/// Writes the run's records as CSV (same schema as the CLI harness).
///
/// # Safety
/// `run` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_write_csv(
    run: *const DizoRun,
    path: *const c_char,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        let path = match unsafe { path_from(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_records_csv(&path, &run.output.records, &run.layer_order, run.projected) {
            Ok(()) => DizoStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Saves the final parameters as a checkpoint file.
///
/// # Safety
/// `run` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_save_checkpoint(
    run: *const DizoRun,
    path: *const c_char,
) -> DizoStatus {
    guard(|| {
        let Some(run) = (unsafe { run.as_ref() }) else {
            set_last_error("run is null");
            return DizoStatus::NullPointer;
        };
        let path = match unsafe { path_from(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_params(&path, &run.output.final_params) {
            Ok(()) => DizoStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `run` must come from a run function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dizo_run_free(run: *mut DizoRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}
