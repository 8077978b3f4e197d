/* C interface to the trainstab update screen. Generated; do not edit. */

#ifndef TRAINSTAB_H
#define TRAINSTAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a C-interface call.
 */
typedef enum StabStatus {
  /**
   * The call succeeded.
   */
  STAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  STAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * A scalar argument was outside its legal range (for example a
   * non-positive threshold or a non-finite initial probe value).
   */
  STAB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A buffer length did not match what the controller tracks.
   */
  STAB_STATUS_DIMENSION_MISMATCH = 3,
} StabStatus;

/**
 * The controller's verdict on one proposed update.
 */
typedef enum StabDecision {
  /**
   * The proposal was committed and snapshotted.
   */
  STAB_DECISION_ACCEPT = 0,
  /**
   * The proposal was discarded; parameters and optimizer state were
   * restored from the last accepted snapshot.
   */
  STAB_DECISION_ROLLBACK = 1,
} StabDecision;

/**
 * Opaque update-screening controller. Only pointers to this type cross the
 * boundary; the layout is private to the library.
 */
typedef struct StabController StabController;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a controller supervising `n_params` parameters.
 *
 * `params`/`n_params` and `state`/`state_len` give the initial (trusted)
 * training state; `state` may be null only when `state_len` is zero. `y0`
 * is the probe value of the initial parameters, `epsilon` the acceptance
 * threshold, and `alpha` the reference smoothing coefficient in `(0, 1]`.
 * On success writes the new handle to `out` and returns `Ok`.
 *
 * # Safety
 *
 * `params` must point to `n_params` readable doubles, `state` to
 * `state_len` readable bytes, and `out` to a writable pointer slot. The
 * returned handle must be released with [`stab_controller_free`] exactly
 * once.
 */
enum StabStatus stab_controller_new(const double *params,
                                    uintptr_t n_params,
                                    const uint8_t *state,
                                    uintptr_t state_len,
                                    double y0,
                                    double epsilon,
                                    double alpha,
                                    struct StabController **out);

/**
 * Screens one proposed update and writes the verdict to `out_decision`.
 *
 * On `Accept` the proposal becomes the new safe state; on `Rollback` the
 * controller's parameters and state blob revert to the last accepted
 * snapshot, and the caller should copy both back before continuing. A
 * non-finite `y_prop` always rolls back. `n_params` must equal the count
 * the controller was created with; the state blob may change length.
 *
 * # Safety
 *
 * `ctrl` must be a live handle from [`stab_controller_new`]; `params` must
 * point to `n_params` readable doubles, `state` to `state_len` readable
 * bytes (null allowed only when `state_len` is zero), and `out_decision`
 * to a writable decision slot.
 */
enum StabStatus stab_controller_submit(struct StabController *ctrl,
                                       const double *params,
                                       uintptr_t n_params,
                                       const uint8_t *state,
                                       uintptr_t state_len,
                                       double y_prop,
                                       enum StabDecision *out_decision);

/**
 * Number of parameters the controller tracks; `0` on a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
uintptr_t stab_controller_param_count(const struct StabController *ctrl);

/**
 * Copies the controller's current parameters into `out`, which must hold
 * exactly `stab_controller_param_count` doubles. After a rollback this is
 * the restored safe state.
 *
 * # Safety
 *
 * `ctrl` must be a live handle and `out` writable for `n` doubles.
 */
enum StabStatus stab_controller_params(const struct StabController *ctrl, double *out, uintptr_t n);

/**
 * Length in bytes of the controller's current optimizer-state blob; `0` on
 * a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
uintptr_t stab_controller_state_len(const struct StabController *ctrl);

/**
 * Copies the controller's current optimizer-state blob into `out`, which
 * must hold exactly `stab_controller_state_len` bytes. After a rollback
 * this is the restored safe state.
 *
 * # Safety
 *
 * `ctrl` must be a live handle and `out` writable for `len` bytes.
 */
enum StabStatus stab_controller_state(const struct StabController *ctrl,
                                      uint8_t *out,
                                      uintptr_t len);

/**
 * Current reference (smoothed probe) value; `NaN` on a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
double stab_controller_y_hat(const struct StabController *ctrl);

/**
 * Number of proposals screened so far; `0` on a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
uint64_t stab_controller_step_count(const struct StabController *ctrl);

/**
 * Number of accepted proposals; `0` on a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
uint64_t stab_controller_accept_count(const struct StabController *ctrl);

/**
 * Number of rolled-back proposals; `0` on a null handle.
 *
 * # Safety
 *
 * `ctrl` must be null or a live handle.
 */
uint64_t stab_controller_rollback_count(const struct StabController *ctrl);

/**
 * Releases a controller. Null is a no-op.
 *
 * # Safety
 *
 * `ctrl` must be null or a handle from [`stab_controller_new`] that has not
 * been freed before; the handle is invalid afterwards.
 */
void stab_controller_free(struct StabController *ctrl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAINSTAB_H */
