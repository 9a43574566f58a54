#ifndef COLLAPSE_WALK_H
#define COLLAPSE_WALK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_INVALID_ARGUMENT = 1,
  CW_STATUS_NULL_POINTER = 2,
  CW_STATUS_TRUNCATED = 3,
  CW_STATUS_INVARIANT_VIOLATION = 4,
  CW_STATUS_OUT_OF_RANGE = 5,
  CW_STATUS_DEGENERATE = 6,
  CW_STATUS_PANIC = 7,
} CwStatus;

// Opaque handle to a set of regeneration cycles.
typedef struct CwCycles CwCycles;

// Opaque trajectory handle.
typedef struct CwTrajectory CwTrajectory;

typedef struct CwParams {
  double lambda;
  double p;
  double mu;
  uint32_t dim;
} CwParams;

typedef struct CwEstimate {
  uint64_t n;
  double alpha_hat;
  double se_alpha;
  // Variance of the first coordinate's increment.
  double beta2_hat;
  // The coefficient in 1D; its trace over axes otherwise.
  double coeff;
  double se_coeff;
  double coeff_ci_lo;
  double coeff_ci_hi;
} CwEstimate;

typedef struct CwZetaForms {
  double e_zeta_minus_sigma;
  double e_zeta;
  double e_x_zeta_sq;
  double gap;
} CwZetaForms;

typedef struct CwEnclosure {
  double absorbed_value;
  double absorbed_mass;
  double residual_mass;
  double tail_bound;
  uint64_t depth;
} CwEnclosure;

typedef struct CwCycleEnclosure {
  struct CwEnclosure alpha;
  struct CwEnclosure x2;
  bool converged;
} CwCycleEnclosure;

typedef struct CwBusyCycle {
  uint64_t n;
  double mean;
  double se;
  double closed_form;
} CwBusyCycle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cw_version(void);

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *cw_last_error_message(void);

// Simulates one trajectory from the empty environment up to `horizon`,
// keeping its event log.
//
// # Safety
// `params` must point to a valid `CwParams`; `out` to writable storage.
enum CwStatus cw_trajectory_simulate(const struct CwParams *params,
                                     uint64_t seed,
                                     double horizon,
                                     struct CwTrajectory **out_handle);

// # Safety
// `traj` must be a live handle; `count` writable.
enum CwStatus cw_trajectory_event_count(const struct CwTrajectory *traj, uint64_t *count);

// Writes the final position (`dim` coordinates) into `coords`.
//
// # Safety
// `traj` must be a live handle; `coords` must hold `len` values.
enum CwStatus cw_trajectory_final_position(const struct CwTrajectory *traj,
                                           int64_t *coords,
                                           size_t len);

// Positions at `n` sorted times, written row-major as `n * dim` values.
//
// # Safety
// `traj` must be a live handle; `times` must hold `n` values and `coords`
// `n * dim` values.
enum CwStatus cw_trajectory_positions(const struct CwTrajectory *traj,
                                      const double *times,
                                      size_t n,
                                      int64_t *coords);

// # Safety
// `traj` must be null or a handle not yet freed.
void cw_trajectory_free(struct CwTrajectory *traj);

// Collects `n_cycles` regeneration cycles on `workers` threads. Results
// do not depend on `workers`.
//
// # Safety
// `params` must point to a valid `CwParams`; `out_handle` writable.
enum CwStatus cw_cycles_collect(const struct CwParams *params,
                                size_t n_cycles,
                                uint64_t seed,
                                uint32_t workers,
                                struct CwCycles **out_handle);

// # Safety
// `cycles` must be a live handle; `len` writable.
enum CwStatus cw_cycles_len(const struct CwCycles *cycles, size_t *len);

// Duration and displacement (`dim` values) of cycle `index`.
//
// # Safety
// `cycles` must be a live handle; `delta_tau` writable; `delta_x` must hold
// `len` values.
enum CwStatus cw_cycles_get(const struct CwCycles *cycles,
                            size_t index,
                            double *delta_tau,
                            int64_t *delta_x,
                            size_t len);

// Regenerative estimates with `confidence`-level intervals.
//
// # Safety
// `cycles` must be a live handle; `est` writable.
enum CwStatus cw_cycles_estimate(const struct CwCycles *cycles,
                                 double confidence,
                                 struct CwEstimate *est);

// # Safety
// `cycles` must be null or a handle not yet freed.
void cw_cycles_free(struct CwCycles *cycles);

// Closed forms for the first-jump-then-repair cycle at `p = 1`.
//
// # Safety
// `forms` must be writable.
enum CwStatus cw_zeta_forms(double lambda, double mu, struct CwZetaForms *forms);

// Exhaustive enumeration of one 1D cycle to `depth` events or until the
// unabsorbed mass drops below `mass_tol`.
//
// # Safety
// `params` must point to a valid `CwParams`; `result` writable.
enum CwStatus cw_enumerate_cycle(const struct CwParams *params,
                                 size_t depth,
                                 double mass_tol,
                                 struct CwCycleEnclosure *result);

// Mean idle-plus-busy cycle of an M/M/inf queue over `n_cycles` cycles.
//
// # Safety
// `result` must be writable.
enum CwStatus cw_busy_cycle_mean(double arrival_rate,
                                 double service_rate,
                                 size_t n_cycles,
                                 uint64_t seed,
                                 uint32_t workers,
                                 struct CwBusyCycle *result);

// Runs `runs` coupled walk/queue paths to `horizon`; returns
// `CW_STATUS_INVARIANT_VIOLATION` if any path has more broken bonds than
// customers. `violations` receives the count either way.
//
// # Safety
// `params` must point to a valid `CwParams`; `violations` writable.
enum CwStatus cw_coupling_check(const struct CwParams *params,
                                size_t runs,
                                uint64_t seed,
                                double horizon,
                                uint32_t workers,
                                uint64_t *violations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLLAPSE_WALK_H */
