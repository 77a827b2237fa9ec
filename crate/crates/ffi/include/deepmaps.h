#ifndef DEEPMAPS_H
#define DEEPMAPS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_ARGUMENT = 1,
  DM_STATUS_INVALID_UTF8 = 2,
  DM_STATUS_INPUT = 3,
  DM_STATUS_IO = 4,
  DM_STATUS_SCHEMA = 5,
  DM_STATUS_SHAPE = 6,
  DM_STATUS_CONFIG = 7,
  DM_STATUS_NUMERIC = 8,
  DM_STATUS_PANIC = 9,
} DmStatus;

/**
 * A loaded model.
 */
typedef struct DmModel DmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model file. On success `*out` holds a handle to free with
 * [`dm_model_free`]; otherwise it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DmStatus dm_model_load(const char *path, struct DmModel **out);

/**
 * Parse a model from the text of a model file.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DmStatus dm_model_from_text(const char *text, struct DmModel **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dm_model_free(struct DmModel *model);

/**
 * Number of feature columns a row must hold; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dm_model_num_features(const struct DmModel *model);

/**
 * Name of column `index`, or null when out of range. The string lives as
 * long as the handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *dm_model_feature_name(const struct DmModel *model, size_t index);

/**
 * Predict `n_rows` row-major rows of `n_cols` values each, in the model's
 * column order, writing one value per row to `out`.
 *
 * # Safety
 * `rows` must point to `n_rows * n_cols` doubles and `out` to `n_rows`.
 */
enum DmStatus dm_model_predict(const struct DmModel *model,
                               const double *rows,
                               size_t n_rows,
                               size_t n_cols,
                               double *out);

/**
 * Message of the last failure on this thread; empty when none. Valid until
 * the next failing call on the same thread.
 */
const char *dm_last_error(void);

/**
 * Library version as a static string.
 */
const char *dm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPMAPS_H */
