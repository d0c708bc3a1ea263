#ifndef PWP_H
#define PWP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PwpStatus {
  PWP_STATUS_OK = 0,
  PWP_STATUS_NULL_POINTER = 1,
  PWP_STATUS_INVALID_ARGUMENT = 2,
  PWP_STATUS_INVALID_CONFIG = 3,
  PWP_STATUS_NUMERICAL = 4,
  PWP_STATUS_UNSUPPORTED = 5,
  PWP_STATUS_IO = 6,
  PWP_STATUS_BUFFER_TOO_SMALL = 7,
  PWP_STATUS_PANIC = 8,
} PwpStatus;

typedef enum PwpStrategy {
  PWP_STRATEGY_PWP = 0,
  PWP_STRATEGY_ADP = 1,
  PWP_STRATEGY_MCDP = 2,
} PwpStrategy;

/**
 * Experiment configuration.
 */
typedef struct PwpConfig PwpConfig;

/**
 * A forward model, its phantom and one observation.
 */
typedef struct PwpProblem PwpProblem;

/**
 * Result of solving over a μ grid.
 */
typedef struct PwpSweep PwpSweep;

/**
 * Solver diagnostics for one μ.
 */
typedef struct PwpSolveInfo {
  size_t iterations;
  bool converged;
  double final_delta_x;
  double residual;
  double beta;
} PwpSolveInfo;

/**
 * One grid point of a sweep. `snr` and `ssim` are NaN without a truth.
 */
typedef struct PwpRecord {
  double mu;
  double whiteness;
  double discrepancy;
  double mc_delta;
  double snr;
  double ssim;
  size_t iterations;
  bool converged;
  double beta;
} PwpRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pwp_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *pwp_last_error(void);

/**
 * Parses `key = value` text. An empty string yields the defaults.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PwpStatus pwp_config_parse(const char *text, struct PwpConfig **out);

/**
 * Overrides one key.
 *
 * # Safety
 * `config` must come from [`pwp_config_parse`]; `key` and `value` must be
 * NUL-terminated.
 */
enum PwpStatus pwp_config_set(struct PwpConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must come from [`pwp_config_parse`] or be null.
 */
void pwp_config_free(struct PwpConfig *config);

/**
 * Builds the model and phantom described by `config` and draws one
 * observation with `seed`.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum PwpStatus pwp_problem_simulate(const struct PwpConfig *config,
                                    uint64_t seed,
                                    struct PwpProblem **out);

/**
 * Builds the model described by `config` around caller-supplied counts in
 * row-major order. `seed` keys the Monte-Carlo streams.
 *
 * # Safety
 * `counts` must point to `rows * cols` values.
 */
enum PwpStatus pwp_problem_from_counts(const struct PwpConfig *config,
                                       const uint64_t *counts,
                                       size_t rows,
                                       size_t cols,
                                       uint64_t seed,
                                       struct PwpProblem **out);

/**
 * # Safety
 * `problem` must come from a `pwp_problem_*` constructor or be null.
 */
void pwp_problem_free(struct PwpProblem *problem);

/**
 * # Safety
 * All pointers must be valid.
 */
enum PwpStatus pwp_problem_image_shape(const struct PwpProblem *problem,
                                       size_t *rows,
                                       size_t *cols);

/**
 * # Safety
 * All pointers must be valid.
 */
enum PwpStatus pwp_problem_measurement_shape(const struct PwpProblem *problem,
                                             size_t *rows,
                                             size_t *cols);

/**
 * Copies the observed counts, row-major.
 *
 * # Safety
 * `buffer` must hold `len` values.
 */
enum PwpStatus pwp_problem_counts(const struct PwpProblem *problem, uint64_t *buffer, size_t len);

/**
 * Solves at one `mu` with the solver settings of `config` and writes the
 * reconstruction, row-major. `info` may be null.
 *
 * # Safety
 * `x_out` must hold `len` values; `info` must be valid or null.
 */
enum PwpStatus pwp_solve(const struct PwpProblem *problem,
                         const struct PwpConfig *config,
                         double mu,
                         double *x_out,
                         size_t len,
                         struct PwpSolveInfo *info);

/**
 * Solves over the grid of `config` and applies every selector. Set
 * `parallel` to spread grid points over threads.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum PwpStatus pwp_sweep_run(const struct PwpProblem *problem,
                             const struct PwpConfig *config,
                             bool parallel,
                             struct PwpSweep **out);

/**
 * # Safety
 * `sweep` must come from [`pwp_sweep_run`] or be null.
 */
void pwp_sweep_free(struct PwpSweep *sweep);

/**
 * Number of grid points, or 0 for a null handle.
 *
 * # Safety
 * `sweep` must be live or null.
 */
size_t pwp_sweep_len(const struct PwpSweep *sweep);

/**
 * # Safety
 * `sweep` must be live and `out` valid.
 */
enum PwpStatus pwp_sweep_record(const struct PwpSweep *sweep, size_t index, struct PwpRecord *out);

/**
 * Copies the reconstruction at grid point `index`, row-major.
 *
 * # Safety
 * `buffer` must hold `len` values.
 */
enum PwpStatus pwp_sweep_image(const struct PwpSweep *sweep,
                               size_t index,
                               double *buffer,
                               size_t len);

/**
 * Grid index chosen by `strategy`.
 *
 * # Safety
 * `sweep` must be live and `index` valid.
 */
enum PwpStatus pwp_sweep_selected(const struct PwpSweep *sweep,
                                  enum PwpStrategy strategy,
                                  size_t *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PWP_H */
