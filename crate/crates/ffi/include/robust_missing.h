#ifndef ROBUST_MISSING_H
#define ROBUST_MISSING_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by every entry point.
 */
typedef enum RmStatus {
  RM_STATUS_OK = 0,
  RM_STATUS_NULL_POINTER = 1,
  RM_STATUS_INVALID_UTF8 = 2,
  RM_STATUS_INVALID_ARGUMENT = 3,
  RM_STATUS_IO = 4,
  RM_STATUS_PARSE = 5,
  RM_STATUS_DIMENSION = 6,
  RM_STATUS_NUMERICAL = 7,
  RM_STATUS_NOT_CONVERGED = 8,
  RM_STATUS_PANIC = 9,
} RmStatus;

/**
 * Trained discriminant model.
 */
typedef struct RmLdaModel RmLdaModel;

/**
 * Trained regression model.
 */
typedef struct RmRegressionModel RmRegressionModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *rm_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rm_string_free(char *s);

/**
 * Fits a regression of column `target` on the other columns of a CSV.
 * `config_json` is a serialized fit configuration or null for defaults.
 * Returns `NotConverged` with a valid model when the solver stopped early.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum RmStatus rm_regression_fit_csv(const char *path,
                                    const char *target,
                                    const char *missing_token,
                                    const char *config_json,
                                    struct RmRegressionModel **out);

/**
 * Loads a regression model from a training artifact or bare model JSON.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum RmStatus rm_regression_from_json(const char *json, struct RmRegressionModel **out);

/**
 * Serializes the model; free the string with [`rm_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RmStatus rm_regression_to_json(const struct RmRegressionModel *model, char **out);

/**
 * Number of features the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rm_regression_dim(const struct RmRegressionModel *model);

/**
 * Predicts one row of `len` values.
 *
 * # Safety
 * `row` must hold `len` doubles; `out` must be writable.
 */
enum RmStatus rm_regression_predict(const struct RmRegressionModel *model,
                                    const double *row,
                                    size_t len,
                                    double *out);

/**
 * Predicts `nrows` rows stored row-major in `values`, writing `nrows`
 * predictions to `out`.
 *
 * # Safety
 * `values` must hold `nrows * ncols` doubles and `out` `nrows`.
 */
enum RmStatus rm_regression_predict_batch(const struct RmRegressionModel *model,
                                          const double *values,
                                          size_t nrows,
                                          size_t ncols,
                                          double *out);

/**
 * Releases a regression handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle, not used afterwards.
 */
void rm_regression_free(struct RmRegressionModel *model);

/**
 * Fits a discriminant on a CSV with a 0/1 column `label`. Empty label cells
 * are inferred by EM. `config_json` is a serialized EM configuration or null.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum RmStatus rm_lda_fit_csv(const char *path,
                             const char *label,
                             const char *missing_token,
                             const char *config_json,
                             struct RmLdaModel **out);

/**
 * Loads a discriminant model from a training artifact or bare model JSON.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum RmStatus rm_lda_from_json(const char *json, struct RmLdaModel **out);

/**
 * Serializes the model; free the string with [`rm_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RmStatus rm_lda_to_json(const struct RmLdaModel *model, char **out);

/**
 * Number of features the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rm_lda_dim(const struct RmLdaModel *model);

/**
 * Classifies one row; either output pointer may be null.
 *
 * # Safety
 * `row` must hold `len` doubles.
 */
enum RmStatus rm_lda_predict(const struct RmLdaModel *model,
                             const double *row,
                             size_t len,
                             uint8_t *label,
                             double *probability);

/**
 * Releases a discriminant handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle, not used afterwards.
 */
void rm_lda_free(struct RmLdaModel *model);

/**
 * Imputes every missing cell of `input` and writes the completed CSV to
 * `output`. `config_json` is a serialized imputation configuration or null.
 *
 * # Safety
 * String arguments must be NUL-terminated.
 */
enum RmStatus rm_impute_csv(const char *input,
                            const char *output,
                            const char *missing_token,
                            const char *config_json);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_MISSING_H */
