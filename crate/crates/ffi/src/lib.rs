//! C interface to the update screen.
//!
//! The embedding model mirrors the library's `Supervisor`: the caller owns
//! the optimizer and the probe, the controller owns the decision and the
//! safe state. Every step the caller proposes a parameter vector, an opaque
//! optimizer-state blob, and the probe value of the proposal; the controller
//! either accepts it or rolls back to the last accepted pair, and the caller
//! copies the surviving state back out before computing the next step.
//!
//! Conventions:
//!
//! * a controller is an opaque handle created by [`stab_controller_new`] and
//!   released by [`stab_controller_free`]; handles are not thread-safe,
//! * fallible calls return a [`StabStatus`] and write results through `out`
//!   pointers; pure getters return a sentinel (`NaN` or `0`) on a null
//!   handle,
//! * buffers are always caller-allocated; `_len`/`_count` getters size them,
//! * the optimizer-state blob is never interpreted, only stored, compared by
//!   the caller, and handed back after a rollback.
//!
//! The generated header is `include/trainstab.h`, refreshed on every build.

use std::slice;

use trainstab::controller::{ControllerConfig, Decision, Supervisor};

/// Result of a C-interface call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A scalar argument was outside its legal range (for example a
    /// non-positive threshold or a non-finite initial probe value).
    InvalidArgument = 2,
    /// A buffer length did not match what the controller tracks.
    DimensionMismatch = 3,
}

/// The controller's verdict on one proposed update.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabDecision {
    /// The proposal was committed and snapshotted.
    Accept = 0,
    /// The proposal was discarded; parameters and optimizer state were
    /// restored from the last accepted snapshot.
    Rollback = 1,
}

/// Opaque update-screening controller. Only pointers to this type cross the
/// boundary; the layout is private to the library.
pub struct StabController {
    inner: Supervisor<Vec<u8>>,
}

/// Creates a controller supervising `n_params` parameters.
///
/// `params`/`n_params` and `state`/`state_len` give the initial (trusted)
/// training state; `state` may be null only when `state_len` is zero. `y0`
/// is the probe value of the initial parameters, `epsilon` the acceptance
/// threshold, and `alpha` the reference smoothing coefficient in `(0, 1]`.
/// On success writes the new handle to `out` and returns `Ok`.
///
/// # Safety
///
/// `params` must point to `n_params` readable doubles, `state` to
/// `state_len` readable bytes, and `out` to a writable pointer slot. The
/// returned handle must be released with [`stab_controller_free`] exactly
/// once.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_new(
    params: *const f64,
    n_params: usize,
    state: *const u8,
    state_len: usize,
    y0: f64,
    epsilon: f64,
    alpha: f64,
    out: *mut *mut StabController,
) -> StabStatus {
    if out.is_null() || params.is_null() || (state.is_null() && state_len > 0) {
        return StabStatus::NullArgument;
    }
    let params = slice::from_raw_parts(params, n_params).to_vec();
    let state = if state_len == 0 {
        Vec::new()
    } else {
        slice::from_raw_parts(state, state_len).to_vec()
    };
    let config = ControllerConfig {
        epsilon,
        alpha,
        probe_interval: 1,
    };
    match Supervisor::new(params, state, y0, config) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(StabController { inner }));
            StabStatus::Ok
        }
        Err(_) => StabStatus::InvalidArgument,
    }
}

/// Screens one proposed update and writes the verdict to `out_decision`.
///
/// On `Accept` the proposal becomes the new safe state; on `Rollback` the
/// controller's parameters and state blob revert to the last accepted
/// snapshot, and the caller should copy both back before continuing. A
/// non-finite `y_prop` always rolls back. `n_params` must equal the count
/// the controller was created with; the state blob may change length.
///
/// # Safety
///
/// `ctrl` must be a live handle from [`stab_controller_new`]; `params` must
/// point to `n_params` readable doubles, `state` to `state_len` readable
/// bytes (null allowed only when `state_len` is zero), and `out_decision`
/// to a writable decision slot.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_submit(
    ctrl: *mut StabController,
    params: *const f64,
    n_params: usize,
    state: *const u8,
    state_len: usize,
    y_prop: f64,
    out_decision: *mut StabDecision,
) -> StabStatus {
    if ctrl.is_null()
        || params.is_null()
        || out_decision.is_null()
        || (state.is_null() && state_len > 0)
    {
        return StabStatus::NullArgument;
    }
    let ctrl = &mut (*ctrl).inner;
    if n_params != ctrl.params().len() {
        return StabStatus::DimensionMismatch;
    }
    let params = slice::from_raw_parts(params, n_params).to_vec();
    let state = if state_len == 0 {
        Vec::new()
    } else {
        slice::from_raw_parts(state, state_len).to_vec()
    };
    match ctrl.submit(params, state, y_prop, 0.0) {
        Ok(record) => {
            *out_decision = match record.decision {
                Decision::Accept => StabDecision::Accept,
                Decision::Rollback => StabDecision::Rollback,
                Decision::Skipped => unreachable!("submit always decides"),
            };
            StabStatus::Ok
        }
        Err(_) => StabStatus::InvalidArgument,
    }
}

/// Number of parameters the controller tracks; `0` on a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_param_count(ctrl: *const StabController) -> usize {
    if ctrl.is_null() {
        return 0;
    }
    (*ctrl).inner.params().len()
}

/// Copies the controller's current parameters into `out`, which must hold
/// exactly `stab_controller_param_count` doubles. After a rollback this is
/// the restored safe state.
///
/// # Safety
///
/// `ctrl` must be a live handle and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_params(
    ctrl: *const StabController,
    out: *mut f64,
    n: usize,
) -> StabStatus {
    if ctrl.is_null() || out.is_null() {
        return StabStatus::NullArgument;
    }
    let params = (*ctrl).inner.params();
    if n != params.len() {
        return StabStatus::DimensionMismatch;
    }
    slice::from_raw_parts_mut(out, n).copy_from_slice(params);
    StabStatus::Ok
}

/// Length in bytes of the controller's current optimizer-state blob; `0` on
/// a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_state_len(ctrl: *const StabController) -> usize {
    if ctrl.is_null() {
        return 0;
    }
    (*ctrl).inner.state().len()
}

/// Copies the controller's current optimizer-state blob into `out`, which
/// must hold exactly `stab_controller_state_len` bytes. After a rollback
/// this is the restored safe state.
///
/// # Safety
///
/// `ctrl` must be a live handle and `out` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_state(
    ctrl: *const StabController,
    out: *mut u8,
    len: usize,
) -> StabStatus {
    if ctrl.is_null() || out.is_null() {
        return StabStatus::NullArgument;
    }
    let state = (*ctrl).inner.state();
    if len != state.len() {
        return StabStatus::DimensionMismatch;
    }
    slice::from_raw_parts_mut(out, len).copy_from_slice(state);
    StabStatus::Ok
}

/// Current reference (smoothed probe) value; `NaN` on a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_y_hat(ctrl: *const StabController) -> f64 {
    if ctrl.is_null() {
        return f64::NAN;
    }
    (*ctrl).inner.y_hat()
}

/// Number of proposals screened so far; `0` on a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_step_count(ctrl: *const StabController) -> u64 {
    if ctrl.is_null() {
        return 0;
    }
    (*ctrl).inner.step_count()
}

/// Number of accepted proposals; `0` on a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_accept_count(ctrl: *const StabController) -> u64 {
    if ctrl.is_null() {
        return 0;
    }
    (*ctrl).inner.accept_count()
}

/// Number of rolled-back proposals; `0` on a null handle.
///
/// # Safety
///
/// `ctrl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_rollback_count(ctrl: *const StabController) -> u64 {
    if ctrl.is_null() {
        return 0;
    }
    (*ctrl).inner.rollback_count()
}

/// Releases a controller. Null is a no-op.
///
/// # Safety
///
/// `ctrl` must be null or a handle from [`stab_controller_new`] that has not
/// been freed before; the handle is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn stab_controller_free(ctrl: *mut StabController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}
