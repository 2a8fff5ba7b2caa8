#ifndef SEQLENS_H
#define SEQLENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_ARGUMENT = 1,
  SL_STATUS_INVALID_UTF8 = 2,
  SL_STATUS_MISSING_FILE = 3,
  SL_STATUS_IO = 4,
  SL_STATUS_PARSE = 5,
  SL_STATUS_SCHEMA_MISMATCH = 6,
  SL_STATUS_VALUE_OUT_OF_RANGE = 7,
  SL_STATUS_VERSION_UNSUPPORTED = 8,
  SL_STATUS_INVALID_DATASET = 9,
  SL_STATUS_INVALID_PARAMS = 10,
  SL_STATUS_UNKNOWN_FEATURE = 11,
  SL_STATUS_CANCELLED = 12,
  SL_STATUS_INTERNAL = 13,
  SL_STATUS_PANIC = 14,
} SlStatus;

/**
 * A loaded dataset bundle with its attention tensor.
 */
typedef struct SlDataset SlDataset;

/**
 * The outcome of one full analysis run.
 */
typedef struct SlResult SlResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none.
 * Valid until the next failing call on the same thread.
 */
const char *sl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sl_version(void);

/**
 * Loads and validates the bundle described by `manifest_path`.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string; `out` must be writable.
 */
enum SlStatus sl_dataset_open(const char *manifest_path, struct SlDataset **out);

/**
 * # Safety
 * `dataset` must come from `sl_dataset_open` and not be used afterwards.
 */
void sl_dataset_free(struct SlDataset *dataset);

/**
 * Instance, time-step, feature and class counts. Any output may be null.
 *
 * # Safety
 * `dataset` must be a live handle.
 */
enum SlStatus sl_dataset_shape(const struct SlDataset *dataset,
                               size_t *instances,
                               size_t *time_steps,
                               size_t *features,
                               size_t *classes);

/**
 * Feature ranking under `params_json` (null for defaults) as a JSON array.
 * Release the string with `sl_string_free`.
 *
 * # Safety
 * `dataset` must be a live handle; `params_json` null or NUL-terminated;
 * `out_json` writable.
 */
enum SlStatus sl_rank_json(const struct SlDataset *dataset,
                           const char *params_json,
                           char **out_json);

/**
 * Runs the full pipeline under `params_json` (null for defaults).
 *
 * # Safety
 * `dataset` must be a live handle; `params_json` null or NUL-terminated;
 * `out` writable.
 */
enum SlStatus sl_analyze(const struct SlDataset *dataset,
                         const char *params_json,
                         struct SlResult **out);

/**
 * # Safety
 * `result` must come from `sl_analyze` and not be used afterwards.
 */
void sl_result_free(struct SlResult *result);

/**
 * The whole result as JSON. Release with `sl_string_free`.
 *
 * # Safety
 * `result` must be a live handle; `out_json` writable.
 */
enum SlStatus sl_result_json(const struct SlResult *result, char **out_json);

/**
 * Two-class comparison for `feature`. Negative `t0`/`t1` select the full
 * time range.
 *
 * # Safety
 * `result` must be a live handle; `out_json` writable.
 */
enum SlStatus sl_result_summary_json(const struct SlResult *result,
                                     size_t feature,
                                     size_t class_a,
                                     size_t class_b,
                                     int64_t t0,
                                     int64_t t1,
                                     char **out_json);

/**
 * Writes the result to `path` as deterministic pretty JSON.
 *
 * # Safety
 * `result` must be a live handle; `path` NUL-terminated.
 */
enum SlStatus sl_result_export(const struct SlResult *result, const char *path);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void sl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQLENS_H */
