#ifndef TOKENLAB_H
#define TOKENLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LabStatus {
  LAB_STATUS_OK = 0,
  LAB_STATUS_NULL_POINTER = 1,
  LAB_STATUS_INVALID_ARGUMENT = 2,
  LAB_STATUS_NUMERIC = 3,
  LAB_STATUS_IO = 4,
  LAB_STATUS_BUFFER_TOO_SMALL = 5,
  LAB_STATUS_PANIC = 6,
} LabStatus;

/**
 * Readout models, passed as `int32_t`.
 */
typedef enum LabModel {
  LAB_MODEL_POOLED = 0,
  LAB_MODEL_VECTORIZED = 1,
  LAB_MODEL_ATTENTION = 2,
  LAB_MODEL_APPROX_ATTENTION = 3,
} LabModel;

/**
 * Losses, passed as `int32_t`.
 */
typedef enum LabLoss {
  LAB_LOSS_LOGISTIC = 0,
  LAB_LOSS_QUADRATIC = 1,
} LabLoss;

/**
 * Feature maps, passed as `int32_t`.
 */
typedef enum LabFeatures {
  LAB_FEATURES_POOLED = 0,
  LAB_FEATURES_VECTORIZED = 1,
  LAB_FEATURES_ATTENTION = 2,
} LabFeatures;

/**
 * Labeled sequences drawn from a task.
 */
typedef struct LabBatch LabBatch;

/**
 * Seeded random generator.
 */
typedef struct LabRng LabRng;

/**
 * Task parameters and signal direction.
 */
typedef struct LabTask LabTask;

/**
 * State-equation solution of a linear readout.
 */
typedef struct LabTheory {
  double mu1;
  double mu2;
  double b;
  double nu;
  double chi;
  double mu3;
  double e_test;
  double e_train;
  bool converged;
} LabTheory;

/**
 * Predicted statistics after the two gradient steps.
 */
typedef struct LabTwoStep {
  double b1;
  double s_w;
  double s_q;
  double q2_norm;
} LabTwoStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lab_version(void);

double lab_normal_cdf(double x);

double lab_gaussian_tail_moment2(double a);

/**
 * Proximal map of `gamma·loss(·, y)` at `x`.
 *
 * # Safety
 * `out` must be valid for one `double` write.
 */
enum LabStatus lab_prox(int32_t loss, double y, double x, double gamma, double *out);

/**
 * Creates a task with `ξ = e₁` and uniform token locations.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum LabStatus lab_task_new(size_t l,
                            size_t r,
                            double theta,
                            double pi,
                            size_t d,
                            struct LabTask **out);

/**
 * # Safety
 * `task` must come from [`lab_task_new`] and not be used afterwards.
 */
void lab_task_free(struct LabTask *task);

/**
 * `θR/√L`.
 *
 * # Safety
 * `task` must be a live handle and `out` valid for one write.
 */
enum LabStatus lab_task_pooled_snr(const struct LabTask *task, double *out);

/**
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum LabStatus lab_rng_new(uint64_t seed, struct LabRng **out);

/**
 * # Safety
 * `rng` must come from [`lab_rng_new`] and not be used afterwards.
 */
void lab_rng_free(struct LabRng *rng);

/**
 * Draws `n` samples.
 *
 * # Safety
 * `task` and `rng` must be live handles, `out` valid for one write.
 */
enum LabStatus lab_batch_sample(const struct LabTask *task,
                                struct LabRng *rng,
                                size_t n,
                                struct LabBatch **out);

/**
 * # Safety
 * `batch` must come from [`lab_batch_sample`] and not be used afterwards.
 */
void lab_batch_free(struct LabBatch *batch);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t lab_batch_len(const struct LabBatch *batch);

/**
 * Copies sample `index` into `x` (`L·d` doubles, row-major) and its label
 * into `y`.
 *
 * # Safety
 * `x` must hold `len` doubles and `y` be valid for one write.
 */
enum LabStatus lab_batch_get(const struct LabBatch *batch,
                             size_t index,
                             double *x,
                             size_t len,
                             int8_t *y);

/**
 * Features of sample `index`. `q` (length `d`) and `beta` are read for the
 * attention map only; `q` may be null otherwise. Writes `d` doubles, or
 * `L·d` for the vectorized map.
 *
 * # Safety
 * `q` must hold `d` doubles when used and `out` must hold `len` doubles.
 */
enum LabStatus lab_batch_features(const struct LabBatch *batch,
                                  size_t index,
                                  int32_t kind,
                                  const double *q,
                                  double beta,
                                  double *out,
                                  size_t len);

/**
 * Limit of the optimal test error. `value` is NaN when only the
 * `strictly_positive` flag is known. Pass `INFINITY` for an infinite SNR
 * and a negative `attention_ratio` to leave it unset.
 *
 * # Safety
 * `value` and `strictly_positive` must be valid for one write each.
 */
enum LabStatus lab_limit_optimal_error(int32_t model,
                                       double snr,
                                       double pi,
                                       double attention_ratio,
                                       double *value,
                                       bool *strictly_positive);

/**
 * Predicted separability threshold of the pooled or vectorized readout.
 *
 * # Safety
 * `task` must be a live handle and `out` valid for one write.
 */
enum LabStatus lab_capacity(int32_t model, const struct LabTask *task, double *out);

/**
 * State-equation solution of the pooled or vectorized readout at sample
 * ratio `alpha1 = n/d`.
 *
 * # Safety
 * `task` must be a live handle and `out` valid for one write.
 */
enum LabStatus lab_linear_theory(int32_t model,
                                 const struct LabTask *task,
                                 double alpha1,
                                 double lambda,
                                 int32_t loss,
                                 struct LabTheory *out);

/**
 * Predicted bias and cosines after the two gradient steps, with a shared
 * learning rate `eta`. `exact` selects the simulation-matched convention.
 *
 * # Safety
 * `task` must be a live handle and `out` valid for one write.
 */
enum LabStatus lab_two_step_predict(const struct LabTask *task,
                                    double eta,
                                    double beta,
                                    double alpha0,
                                    int32_t loss,
                                    bool exact,
                                    struct LabTwoStep *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOKENLAB_H */
