#ifndef RISKPLAN_H
#define RISKPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum RpStatus {
  RP_STATUS_OK = 0,
  // A required pointer argument was null.
  RP_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  RP_STATUS_INVALID_UTF8 = 2,
  // A JSON argument did not parse into the expected type.
  RP_STATUS_INVALID_JSON = 3,
  // Arguments parsed but failed validation.
  RP_STATUS_INVALID_INPUT = 4,
  // The solver or generator reported an error.
  RP_STATUS_SOLVER_FAILURE = 5,
  // An internal panic was caught at the boundary.
  RP_STATUS_PANIC = 6,
} RpStatus;

// A validated model. Always held as a POMDP; an MDP is stored with the
// identity observation model.
typedef struct RpModel RpModel;

// A solver result serialized to JSON, plus its headline numbers.
typedef struct RpResult RpResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the same
// thread.
const char *rp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rp_version(void);

// Parses a model from JSON. A document with an `observation` field is read
// as a POMDP, anything else as an MDP.
//
// # Safety
// `json` must be null or a NUL-terminated string; `out` must be null or
// point to writable storage for one pointer.
enum RpStatus rp_model_from_json(const char *json, struct RpModel **out);

// Generates a grid-world POMDP from a grid spec in JSON; null uses the
// default spec.
//
// # Safety
// `spec_json` must be null or a NUL-terminated string; `out` must be null or
// point to writable storage for one pointer.
enum RpStatus rp_model_from_grid(const char *spec_json, struct RpModel **out);

// Writes the state, action, observation and constraint counts of `model`.
// Any output pointer may be null.
//
// # Safety
// `model` must be null or a live handle from this library; non-null output
// pointers must be writable.
enum RpStatus rp_model_dims(const struct RpModel *model,
                            size_t *num_states,
                            size_t *num_actions,
                            size_t *num_observations,
                            size_t *num_constraints);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void rp_model_free(struct RpModel *model);

// Solves the constrained risk-averse MDP of `model` (its fully observed
// part). `params_json` may be null for default solver settings.
//
// # Safety
// `model` must be a live handle; string arguments must be null or
// NUL-terminated; `out` must be writable.
enum RpStatus rp_solve_mdp(const struct RpModel *model,
                           const char *measure_json,
                           const char *params_json,
                           struct RpResult **out);

// Runs finite-state-controller policy iteration on `model`. `params_json`
// may be null for default settings.
//
// # Safety
// As for [`rp_solve_mdp`].
enum RpStatus rp_solve_pomdp(const struct RpModel *model,
                             const char *measure_json,
                             const char *params_json,
                             struct RpResult **out);

// Borrowed JSON text of a result, valid until the result is freed.
//
// # Safety
// `result` must be null or a live handle.
const char *rp_result_json(const struct RpResult *result);

// Writes the Lagrangian lower bound of a result.
//
// # Safety
// `result` must be null or a live handle; `out` must be null or writable.
enum RpStatus rp_result_lower_bound(const struct RpResult *result, double *out);

// Releases a result. Null is ignored.
//
// # Safety
// `result` must be null or a handle from this library not yet freed.
void rp_result_free(struct RpResult *result);

// One-step risk `σ(values, probs)` of a discrete distribution of `n`
// outcomes.
//
// # Safety
// `values` and `probs` must point to `n` readable doubles; `measure_json`
// must be NUL-terminated; `out` must be writable.
enum RpStatus rp_risk_evaluate(const char *measure_json,
                               const double *values,
                               const double *probs,
                               size_t n,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISKPLAN_H */
