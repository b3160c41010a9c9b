/* C ABI for the dassim block-dissemination simulator. */

#ifndef DASSIM_H
#define DASSIM_H

/* This file is generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum DassimStatus {
  /**
   * The call succeeded.
   */
  DASSIM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DASSIM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DASSIM_STATUS_INVALID_UTF8 = 2,
  /**
   * The config file could not be read.
   */
  DASSIM_STATUS_IO = 3,
  /**
   * The config file could not be parsed or failed validation.
   */
  DASSIM_STATUS_INVALID_CONFIG = 4,
  /**
   * The config file expands to more than one run; the C ABI executes
   * exactly one run per handle.
   */
  DASSIM_STATUS_MULTIPLE_RUNS = 5,
  /**
   * An index argument was out of range.
   */
  DASSIM_STATUS_OUT_OF_RANGE = 6,
} DassimStatus;

/**
 * Termination reasons reported by [`dassim_result_termination`].
 */
typedef enum DassimTermination {
  /**
   * Every custodied sample was delivered before the slot ended.
   */
  DASSIM_TERMINATION_COMPLETE = 0,
  /**
   * The slot deadline passed with samples still missing.
   */
  DASSIM_TERMINATION_TIMEOUT = 1,
  /**
   * No traffic was queued or in flight but samples were still missing.
   */
  DASSIM_TERMINATION_STALLED = 2,
} DassimTermination;

/**
 * Opaque validated single-run configuration.
 */
typedef struct DassimConfig DassimConfig;

/**
 * Opaque run result: final counters plus the per-step missing-samples series.
 */
typedef struct DassimResult DassimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the error message from the most recent failing call on this
 * thread, or null if the last call succeeded. The pointer is valid until
 * the next dassim call on the same thread; do not free it.
 */
const char *dassim_last_error(void);

/**
 * Loads and validates a single-run configuration from `path` (the same
 * `key = value` format the CLI accepts). On success stores a new handle in
 * `*out`; free it with [`dassim_config_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum DassimStatus dassim_config_load(const char *path, struct DassimConfig **out);

/**
 * Returns the derived seed the run will use.
 *
 * # Safety
 * `cfg` must be a live handle from [`dassim_config_load`].
 */
uint64_t dassim_config_seed(const struct DassimConfig *cfg);

/**
 * Frees a config handle. Passing null is a no-op.
 *
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void dassim_config_free(struct DassimConfig *cfg);

/**
 * Executes the configured run to completion and stores a result handle in
 * `*out`; free it with [`dassim_result_free`]. The same config handle can be
 * run repeatedly and always produces identical results.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum DassimStatus dassim_run(const struct DassimConfig *cfg, struct DassimResult **out);

/**
 * Total custody samples delivered over the run.
 *
 * # Safety
 * `res` must be a live result handle.
 */
uint64_t dassim_result_delivered(const struct DassimResult *res);

/**
 * Theoretical total custody samples for the run's configuration.
 *
 * # Safety
 * `res` must be a live result handle.
 */
uint64_t dassim_result_theoretical(const struct DassimResult *res);

/**
 * Why the run terminated.
 *
 * # Safety
 * `res` must be a live result handle.
 */
enum DassimTermination dassim_result_termination(const struct DassimResult *res);

/**
 * Number of entries in the per-step series (step 0 is the initial state).
 *
 * # Safety
 * `res` must be a live result handle.
 */
size_t dassim_result_steps(const struct DassimResult *res);

/**
 * Reads series entry `index` into `*time_ms` and `*missing` (either output
 * pointer may be null to skip it). Fails with `OutOfRange` past the end.
 *
 * # Safety
 * `res` must be a live result handle; non-null outputs must be writable.
 */
enum DassimStatus dassim_result_missing_at(const struct DassimResult *res,
                                           size_t index,
                                           uint64_t *time_ms,
                                           uint64_t *missing);

/**
 * Frees a result handle. Passing null is a no-op.
 *
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void dassim_result_free(struct DassimResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DASSIM_H */
