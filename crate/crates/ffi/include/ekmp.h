#ifndef EKMP_H
#define EKMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EkmpStatus {
  EKMP_STATUS_OK = 0,
  EKMP_STATUS_NULL_ARGUMENT = 1,
  EKMP_STATUS_INVALID_UTF8 = 2,
  /**
   * The scenario failed validation.
   */
  EKMP_STATUS_CONFIG = 3,
  EKMP_STATUS_IO = 4,
  /**
   * A numerical failure inside the solver (singular system, unbounded dual, ...).
   */
  EKMP_STATUS_NUMERICAL = 5,
  EKMP_STATUS_INVALID_ARGUMENT = 6,
  EKMP_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  EKMP_STATUS_PANIC = 8,
} EkmpStatus;

/**
 * Outcome of a solver run: the optimized trajectory and its trace.
 */
typedef struct EkmpResult EkmpResult;

/**
 * Loaded and validated scenario.
 */
typedef struct EkmpScenario EkmpScenario;

/**
 * Quality measures of a trajectory.
 */
typedef struct EkmpMetrics {
  double u_obs;
  double max_violation;
  double min_constraint;
  /**
   * Nearest body-point distance to any obstacle center (infinity without obstacles).
   */
  double min_distance;
} EkmpMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *ekmp_version(void);

/**
 * Copies the calling thread's last error message into `buf` (nul-terminated,
 * truncated to `len`). Returns the full message length excluding the nul;
 * 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ekmp_last_error_message(char *buf, size_t len);

/**
 * Loads and validates a scenario file. Relative paths inside it resolve
 * against the file's directory.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be a valid pointer.
 */
enum EkmpStatus ekmp_scenario_load(const char *path, struct EkmpScenario **out);

/**
 * Parses scenario text. `base_dir` (may be null for the working directory)
 * anchors relative paths.
 *
 * # Safety
 * `text` and a non-null `base_dir` must be nul-terminated strings; `out`
 * must be a valid pointer.
 */
enum EkmpStatus ekmp_scenario_parse(const char *text,
                                    const char *base_dir,
                                    struct EkmpScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library not yet freed.
 */
void ekmp_scenario_free(struct EkmpScenario *scenario);

/**
 * Degrees of freedom of the scenario's configuration space (0 on null).
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t ekmp_scenario_dof(const struct EkmpScenario *scenario);

/**
 * Runs the solver. `iterations < 0` keeps the scenario's budget; `seed < 0`
 * keeps its seeds.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum EkmpStatus ekmp_run(const struct EkmpScenario *scenario,
                         int64_t iterations,
                         int64_t seed,
                         struct EkmpResult **out);

/**
 * # Safety
 * `result` must be null or a handle from this library not yet freed.
 */
void ekmp_result_free(struct EkmpResult *result);

/**
 * Degrees of freedom; a predicted state has twice as many entries.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ekmp_result_dof(const struct EkmpResult *result);

/**
 * Number of iterations performed.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ekmp_result_iterations(const struct EkmpResult *result);

/**
 * Whether the run stopped on its convergence tolerance.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
bool ekmp_result_converged(const struct EkmpResult *result);

/**
 * Metrics of the initialization (`final_ == false`) or of the returned trajectory.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum EkmpStatus ekmp_result_metrics(const struct EkmpResult *result,
                                    bool final_,
                                    struct EkmpMetrics *out);

/**
 * Evaluates `[q(t), qdot(t)]` into `state`, which must hold `2 * dof` values.
 *
 * # Safety
 * `result` must be a live handle; `state` must point to `len` writable doubles.
 */
enum EkmpStatus ekmp_result_predict(const struct EkmpResult *result,
                                    double t,
                                    double *state,
                                    size_t len);

/**
 * Writes the CSV/JSON artifacts of a run into `dir` (created if missing).
 *
 * # Safety
 * `result` must be a live handle and `dir` a nul-terminated string.
 */
enum EkmpStatus ekmp_result_write(const struct EkmpResult *result, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EKMP_H */
