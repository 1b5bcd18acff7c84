#ifndef GAPSOLVE_H
#define GAPSOLVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GapsolveStatus {
  GAPSOLVE_STATUS_OK = 0,
  GAPSOLVE_STATUS_NULL_POINTER = 1,
  GAPSOLVE_STATUS_DOMAIN = 2,
  GAPSOLVE_STATUS_INVALID = 3,
  GAPSOLVE_STATUS_NUMERICAL = 4,
  GAPSOLVE_STATUS_IO = 5,
  GAPSOLVE_STATUS_PARSE = 6,
  GAPSOLVE_STATUS_PANIC = 7,
} GapsolveStatus;

typedef enum GapsolveShape {
  GAPSOLVE_SHAPE_RAMP = 0,
  GAPSOLVE_SHAPE_BUMP = 1,
} GapsolveShape;

/**
 * Initial guess for [`gapsolve_solve`].
 */
typedef enum GapsolveInit {
  GAPSOLVE_INIT_UPPER = 0,
  GAPSOLVE_INIT_LOWER = 1,
} GapsolveInit;

typedef struct GapsolveKernel GapsolveKernel;

/**
 * Physical parameters plus solver configuration.
 */
typedef struct GapsolveProblem GapsolveProblem;

typedef struct GapsolveSlice GapsolveSlice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *gapsolve_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gapsolve_version(void);

/**
 * Creates a problem with the default solver configuration. The parameter
 * set must be admissible.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GapsolveStatus gapsolve_problem_new(double epsilon,
                                         double debye,
                                         double u0,
                                         double u1,
                                         double u2,
                                         struct GapsolveProblem **out);

/**
 * Replaces the solver configuration.
 *
 * # Safety
 * `problem` must come from [`gapsolve_problem_new`].
 */
enum GapsolveStatus gapsolve_problem_set_config(struct GapsolveProblem *problem,
                                                double quad_rel_tol,
                                                double root_tol,
                                                double fp_tol,
                                                size_t fp_max_iter,
                                                double gap_zero_threshold,
                                                double damping);

/**
 * # Safety
 * `problem` must be NULL or come from [`gapsolve_problem_new`] and not
 * have been freed.
 */
void gapsolve_problem_free(struct GapsolveProblem *problem);

/**
 * Closed-form zero-temperature gap for coupling `u`.
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_delta_zero(const struct GapsolveProblem *problem,
                                        double u,
                                        double *out);

/**
 * Critical temperature of the simple gap equation with coupling `u`.
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_tau(const struct GapsolveProblem *problem, double u, double *out);

/**
 * Simple-gap solution Δ(T) for coupling `u`.
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_solve_gap_at(const struct GapsolveProblem *problem,
                                          double u,
                                          double t,
                                          double *out);

/**
 * Temperature at which the simple gap for coupling `u` equals `delta`.
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_inverse_gap(const struct GapsolveProblem *problem,
                                         double u,
                                         double delta,
                                         double *out);

/**
 * Largest T₁ satisfying the small-temperature contraction condition.
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_max_admissible_t1(const struct GapsolveProblem *problem, double *out);

/**
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_kernel_constant(const struct GapsolveProblem *problem,
                                             double c,
                                             struct GapsolveKernel **out);

/**
 * `level + amplitude·shape(x, ξ)` with shape values in [0, 1].
 *
 * # Safety
 * `problem` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_kernel_separable(const struct GapsolveProblem *problem,
                                              double level,
                                              double amplitude,
                                              enum GapsolveShape shape,
                                              struct GapsolveKernel **out);

/**
 * Loads a tabulated kernel from a CSV file whose grids are in the units
 * of the problem. The returned kernel lives on the problem's energy
 * range.
 *
 * # Safety
 * `problem` must be a live handle, `path` a NUL-terminated string and
 * `out` valid for writes.
 */
enum GapsolveStatus gapsolve_kernel_load(const struct GapsolveProblem *problem,
                                         const char *path,
                                         struct GapsolveKernel **out);

/**
 * # Safety
 * `kernel` must be a live handle and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_kernel_eval(const struct GapsolveKernel *kernel,
                                         double x,
                                         double xi,
                                         double *out);

/**
 * # Safety
 * `kernel` must be NULL or a handle not yet freed.
 */
void gapsolve_kernel_free(struct GapsolveKernel *kernel);

/**
 * Solves the full gap equation at temperature `t`.
 *
 * # Safety
 * `problem` and `kernel` must be live handles and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_solve(const struct GapsolveProblem *problem,
                                   const struct GapsolveKernel *kernel,
                                   double t,
                                   enum GapsolveInit init,
                                   struct GapsolveSlice **out);

/**
 * Transition temperature of the full gap equation.
 *
 * # Safety
 * `problem` and `kernel` must be live handles and `out` valid for writes.
 */
enum GapsolveStatus gapsolve_transition_temperature(const struct GapsolveProblem *problem,
                                                    const struct GapsolveKernel *kernel,
                                                    double *out);

/**
 * Number of nodes in a slice; 0 for NULL.
 *
 * # Safety
 * `slice` must be NULL or a live handle.
 */
size_t gapsolve_slice_len(const struct GapsolveSlice *slice);

/**
 * Copies the node abscissas into `buf`, which must hold `len` values.
 *
 * # Safety
 * `slice` must be a live handle and `buf` valid for `len` writes.
 */
enum GapsolveStatus gapsolve_slice_nodes(const struct GapsolveSlice *slice,
                                         double *buf,
                                         size_t len);

/**
 * Copies the gap values at the nodes into `buf`.
 *
 * # Safety
 * `slice` must be a live handle and `buf` valid for `len` writes.
 */
enum GapsolveStatus gapsolve_slice_values(const struct GapsolveSlice *slice,
                                          double *buf,
                                          size_t len);

/**
 * Residual, iteration count and envelope bounds of a solve. Any output
 * pointer may be NULL.
 *
 * # Safety
 * `slice` must be a live handle; non-NULL outputs must be valid for writes.
 */
enum GapsolveStatus gapsolve_slice_diagnostics(const struct GapsolveSlice *slice,
                                               double *residual,
                                               size_t *iterations,
                                               double *delta1,
                                               double *delta2);

/**
 * # Safety
 * `slice` must be NULL or a handle not yet freed.
 */
void gapsolve_slice_free(struct GapsolveSlice *slice);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAPSOLVE_H */
