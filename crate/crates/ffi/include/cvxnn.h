#ifndef CVXNN_H
#define CVXNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvxnnSolver {
  CVXNN_SOLVER_CONIC = 0,
  CVXNN_SOLVER_ADMM = 1,
  CVXNN_SOLVER_PENALIZED = 2,
} CvxnnSolver;

typedef enum CvxnnStatus {
  CVXNN_STATUS_OK = 0,
  CVXNN_STATUS_NULL_POINTER = 1,
  CVXNN_STATUS_INVALID_ARGUMENT = 2,
  CVXNN_STATUS_DATA_ERROR = 3,
  CVXNN_STATUS_NOT_CONVERGED = 4,
  CVXNN_STATUS_RANK_TOO_LARGE = 5,
  CVXNN_STATUS_UNSUPPORTED = 6,
  CVXNN_STATUS_BUFFER_TOO_SMALL = 7,
  CVXNN_STATUS_PANIC = 8,
} CvxnnStatus;

/**
 * Features with optional labels.
 */
typedef struct CvxnnDataset CvxnnDataset;

/**
 * Trained convex model and its reconstructed network.
 */
typedef struct CvxnnModel CvxnnModel;

typedef struct CvxnnPatterns CvxnnPatterns;

typedef struct CvxnnTrainOptions {
  double beta;
  /**
   * Leaky slope; 0 is ReLU.
   */
  double kappa;
  enum CvxnnSolver solver;
  /**
   * 0 keeps the library default.
   */
  size_t max_iters;
  /**
   * Relative tolerance; 0 keeps the library default.
   */
  double tol;
} CvxnnTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *cvxnn_last_error(void);

/**
 * Defaults: ReLU, beta = 1e-3, conic solver, library tolerances.
 */
struct CvxnnTrainOptions cvxnn_train_options_default(void);

/**
 * Copies `n × d` row-major features and, when `y` is non-null, `n × outputs`
 * row-major labels. `bias != 0` appends a ones column.
 */
enum CvxnnStatus cvxnn_dataset_create(const double *x,
                                      size_t n,
                                      size_t d,
                                      const double *y,
                                      size_t outputs,
                                      int32_t bias,
                                      struct CvxnnDataset **out);

void cvxnn_dataset_free(struct CvxnnDataset *ds);

/**
 * Every activation pattern of the dataset's feature rows.
 */
enum CvxnnStatus cvxnn_enumerate(const struct CvxnnDataset *ds, struct CvxnnPatterns **out);

/**
 * Patterns hit by `count` seeded Gaussian directions.
 */
enum CvxnnStatus cvxnn_sample(const struct CvxnnDataset *ds,
                              size_t count,
                              uint64_t seed,
                              struct CvxnnPatterns **out);

enum CvxnnStatus cvxnn_patterns_count(const struct CvxnnPatterns *p, size_t *out);

/**
 * Writes pattern `index` as `n` bytes of 0/1 into `bits` (length `len`).
 */
enum CvxnnStatus cvxnn_patterns_get(const struct CvxnnPatterns *p,
                                    size_t index,
                                    uint8_t *bits,
                                    size_t len);

void cvxnn_patterns_free(struct CvxnnPatterns *p);

/**
 * Region-count bound for `n` hyperplanes of rank `r`, as a NUL-terminated
 * decimal string. `needed` (optional) receives the buffer size required.
 */
enum CvxnnStatus cvxnn_count_bound(size_t n, size_t r, char *buf, size_t len, size_t *needed);

/**
 * Solves the convex program over `patterns` and reconstructs the network.
 * A model is produced even when the solver stops early; the status is then
 * `NotConverged`.
 */
enum CvxnnStatus cvxnn_train(const struct CvxnnDataset *ds,
                             const struct CvxnnPatterns *patterns,
                             const struct CvxnnTrainOptions *opts,
                             struct CvxnnModel **out);

enum CvxnnStatus cvxnn_model_objective(const struct CvxnnModel *m, double *out);

enum CvxnnStatus cvxnn_model_neurons(const struct CvxnnModel *m, size_t *out);

/**
 * Network output for `n × d` row-major features (without the ones column
 * even when the dataset had one); writes `n` values to `out`.
 */
enum CvxnnStatus cvxnn_model_predict(const struct CvxnnModel *m,
                                     const double *x,
                                     size_t n,
                                     size_t d,
                                     double *out,
                                     size_t out_len);

void cvxnn_model_free(struct CvxnnModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVXNN_H */
