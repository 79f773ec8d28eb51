#ifndef MOO_H
#define MOO_H

/* Generated by cbindgen from moo-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MooStatus {
  MOO_STATUS_OK = 0,
  MOO_STATUS_NULL_POINTER = 1,
  MOO_STATUS_INVALID_UTF8 = 2,
  MOO_STATUS_INVALID_ARGUMENT = 3,
  MOO_STATUS_PARSE_ERROR = 4,
  MOO_STATUS_SOLVE_ERROR = 5,
  MOO_STATUS_BUFFER_TOO_SMALL = 6,
} MooStatus;

/**
 * Optimal dual multipliers for a problem.
 */
typedef struct MooDual MooDual;

/**
 * A validated ranking problem plus its stacked dual system.
 */
typedef struct MooProblem MooProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *moo_last_error_message(void);

/**
 * Parse a problem from its JSON document and assemble the dual system.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum MooStatus moo_problem_parse_json(const char *json, struct MooProblem **out);

/**
 * Load a problem from a JSON file on disk.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum MooStatus moo_problem_load(const char *path, struct MooProblem **out);

/**
 * # Safety
 * `p` must come from a `moo_problem_*` constructor (or be null).
 */
void moo_problem_free(struct MooProblem *p);

/**
 * Problem dimensions: users, items, slots, and the flat variable count.
 *
 * # Safety
 * All pointers must be valid; `p` must be a live problem handle.
 */
enum MooStatus moo_problem_dims(const struct MooProblem *p,
                                uint64_t *n_users,
                                uint64_t *n_items,
                                uint64_t *n_slots,
                                uint64_t *dim);

/**
 * Solve the nonnegative dual. `tol <= 0` and `max_iter == 0` pick defaults.
 *
 * # Safety
 * `p` must be a live problem handle and `out` a valid pointer.
 */
enum MooStatus moo_solve_dual(const struct MooProblem *p,
                              double tol,
                              uint64_t max_iter,
                              struct MooDual **out);

/**
 * # Safety
 * `d` must come from `moo_solve_dual` (or be null).
 */
void moo_dual_free(struct MooDual *d);

/**
 * Multipliers and convergence diagnostics of a dual solve.
 * `converged` is 0 or 1.
 *
 * # Safety
 * All pointers must be valid; `d` must be a live dual handle.
 */
enum MooStatus moo_dual_info(const struct MooDual *d,
                             double *mu0,
                             double *mu1,
                             uint64_t *iterations,
                             double *residual,
                             uint8_t *converged);

/**
 * Recover the optimal serving probabilities into `x_out` (length `len`,
 * which must equal the problem's flat dimension).
 *
 * # Safety
 * `p` and `d` must be live handles; `x_out` must point to `len` doubles.
 */
enum MooStatus moo_recover_primal(const struct MooProblem *p,
                                  const struct MooDual *d,
                                  uint8_t allow_unconverged,
                                  double *x_out,
                                  uint64_t len);

/**
 * Sample a serving plan: `plan_out` receives n_users * n_slots item
 * indices, row per user.
 *
 * # Safety
 * `p` and `d` must be live handles; `plan_out` must hold `len` u32 values.
 */
enum MooStatus moo_serving_plan(const struct MooProblem *p,
                                const struct MooDual *d,
                                uint64_t seed,
                                uint8_t allow_unconverged,
                                uint32_t *plan_out,
                                uint64_t len);

/**
 * Generate `n` boundary points of the ellipsoid described by `ellipsoid
 * json` using a sampler name ("net", "nested-net", "cube", "sphere").
 * `out` receives n * dim doubles, row per point.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must hold `len` doubles.
 */
enum MooStatus moo_boundary_points(const char *ellipsoid_json,
                                   uint64_t n,
                                   const char *sampler,
                                   uint64_t seed,
                                   double *out,
                                   uint64_t len);

/**
 * Solve a QCQP (JSON document) by tangent-plane linearization; the solve
 * report comes back as a JSON string to be released with
 * [`moo_string_free`]. `n == 0` picks the default budget.
 *
 * # Safety
 * Strings must be NUL-terminated and `report_out` a valid pointer.
 */
enum MooStatus moo_qcqp_solve_json(const char *qcqp_json,
                                   uint64_t n,
                                   const char *sampler,
                                   uint64_t seed,
                                   double tol,
                                   char **report_out);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library (or be null), and be freed only once.
 */
void moo_string_free(char *s);

/**
 * Riesz energy of `n` points of dimension `dim` packed row-major.
 *
 * # Safety
 * `coords` must hold n * dim doubles; `out` must be valid.
 */
enum MooStatus moo_riesz_energy(const double *coords,
                                uint64_t n,
                                uint64_t dim,
                                double exponent,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOO_H */
