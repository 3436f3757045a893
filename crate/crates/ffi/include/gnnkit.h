#ifndef GNNKIT_H
#define GNNKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Nonzero values match the `gnnkit` command-line exit codes.
 */
typedef enum GnnkitStatus {
  GNNKIT_STATUS_OK = 0,
  /**
   * Null argument, invalid UTF-8, or an internal panic.
   */
  GNNKIT_STATUS_INTERNAL = 1,
  /**
   * Invalid configuration, malformed or inconsistent data.
   */
  GNNKIT_STATUS_INPUT = 2,
  GNNKIT_STATUS_DIVERGENCE = 3,
  GNNKIT_STATUS_IO = 4,
} GnnkitStatus;

/**
 * A loaded dataset.
 */
typedef struct GnnkitDataset GnnkitDataset;

/**
 * Model configuration and trained parameters.
 */
typedef struct GnnkitModel GnnkitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next gnnkit call on this thread.
 */
const char *gnnkit_last_error(void);

/**
 * Library version as a static string.
 */
const char *gnnkit_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void gnnkit_string_free(char *s);

/**
 * Loads a dataset directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GnnkitStatus gnnkit_dataset_load(const char *path, struct GnnkitDataset **out);

/**
 * # Safety
 * `ds` must come from [`gnnkit_dataset_load`] or be null.
 */
void gnnkit_dataset_free(struct GnnkitDataset *ds);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t gnnkit_dataset_num_nodes(const struct GnnkitDataset *ds);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t gnnkit_dataset_feature_dim(const struct GnnkitDataset *ds);

/**
 * Class count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t gnnkit_dataset_num_classes(const struct GnnkitDataset *ds);

/**
 * Run configuration JSON for a named preset applied to `ds`, with seeds
 * `seed .. seed + seeds`. Free the result with [`gnnkit_string_free`].
 *
 * # Safety
 * `ds` must be a live handle, `name` a NUL-terminated string, `out_json` writable.
 */
enum GnnkitStatus gnnkit_preset_config(const struct GnnkitDataset *ds,
                                       const char *name,
                                       uint64_t seed,
                                       size_t seeds,
                                       char **out_json);

/**
 * Trains every seed of the run configuration `config_json` on `ds`.
 *
 * `out_model` receives the best-validation parameters of the first seed.
 * `out_report`, when not null, receives the run report JSON.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` a NUL-terminated string,
 * `out_model` writable and `out_report` writable or null.
 */
enum GnnkitStatus gnnkit_train(const struct GnnkitDataset *ds,
                               const char *config_json,
                               struct GnnkitModel **out_model,
                               char **out_report);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GnnkitStatus gnnkit_model_load(const char *path, struct GnnkitModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum GnnkitStatus gnnkit_model_save(const struct GnnkitModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void gnnkit_model_free(struct GnnkitModel *model);

/**
 * Writes the predicted class of every node into `out[0 .. len]`;
 * `len` must equal the node count.
 *
 * # Safety
 * `model` and `ds` must be live handles; `out` must hold `len` values.
 */
enum GnnkitStatus gnnkit_model_predict(const struct GnnkitModel *model,
                                       const struct GnnkitDataset *ds,
                                       uint32_t *out,
                                       size_t len);

/**
 * Dataset metric (accuracy or ROC-AUC) on the train, validation and test
 * splits. Any out-pointer may be null.
 *
 * # Safety
 * `model` and `ds` must be live handles; non-null out-pointers must be writable.
 */
enum GnnkitStatus gnnkit_model_evaluate(const struct GnnkitModel *model,
                                        const struct GnnkitDataset *ds,
                                        double *out_train,
                                        double *out_val,
                                        double *out_test);

/**
 * Clears the thread's last error message.
 */
void gnnkit_clear_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GNNKIT_H */
