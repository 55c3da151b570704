#ifndef DDPREDICT_H
#define DDPREDICT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define DDP_PREDICTOR_PINV 0

#define DDP_PREDICTOR_SUB 1

#define DDP_PREDICTOR_SMM 2

#define DDP_PREDICTOR_WD 3

#define DDP_PREDICTOR_MSE_MB 4

#define DDP_PREDICTOR_MSE_SUB 5

#define DDP_PREDICTOR_MSE_SMM 6

#define DDP_PREDICTOR_MSE_WD 7

#define DDP_REGION_MB 0

#define DDP_REGION_SUB 1

#define DDP_REGION_SMM 2

#define DDP_REGION_WD 3

/**
 * Result of every fallible call.
 */
typedef enum DdpStatus {
  DDP_STATUS_OK = 0,
  DDP_STATUS_NULL_POINTER = 1,
  DDP_STATUS_INVALID_ARGUMENT = 2,
  DDP_STATUS_NUMERIC = 3,
  DDP_STATUS_FORMAT = 4,
  DDP_STATUS_PANIC = 5,
} DdpStatus;

/**
 * Opaque state-space model.
 */
typedef struct DdpModel DdpModel;

/**
 * Opaque signal matrix.
 */
typedef struct DdpSignalMatrix DdpSignalMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ddp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddp_version(void);

/**
 * Builds a model from row-major `A (n_x*n_x)`, `B (n_x*n_u)`,
 * `C (n_y*n_x)`, `D (n_y*n_u)`.
 */
enum DdpStatus ddp_model_new(uintptr_t n_x,
                             uintptr_t n_u,
                             uintptr_t n_y,
                             const double *a,
                             const double *b,
                             const double *c,
                             const double *d,
                             struct DdpModel **out);

/**
 * Parses a model JSON document (the format the command-line tool writes).
 */
enum DdpStatus ddp_model_from_json(const char *json, struct DdpModel **out);

/**
 * Random stable, observable model with unit H2 norm, `n_x` drawn from
 * `[nx_min, nx_max]`. Deterministic in `seed`.
 */
enum DdpStatus ddp_model_random(uintptr_t nx_min,
                                uintptr_t nx_max,
                                uintptr_t n_u,
                                uintptr_t n_y,
                                uint64_t seed,
                                struct DdpModel **out);

void ddp_model_free(struct DdpModel *model);

enum DdpStatus ddp_model_dims(const struct DdpModel *model,
                              uintptr_t *n_x,
                              uintptr_t *n_u,
                              uintptr_t *n_y);

enum DdpStatus ddp_model_h2_norm(const struct DdpModel *model, double *out);

/**
 * Simulates `len` steps. `x0` may be null (zero state) and `noise`
 * (`len*n_y`) may be null (noise-free). Writes `len*n_y` outputs.
 */
enum DdpStatus ddp_simulate(const struct DdpModel *model,
                            const double *x0,
                            const double *u,
                            const double *noise,
                            uintptr_t len,
                            double *y_out);

/**
 * Page signal matrix from one recorded trajectory (`u`: `len*n_u`,
 * `y`: `len*n_y`).
 */
enum DdpStatus ddp_signal_matrix_page(const double *u,
                                      const double *y,
                                      uintptr_t len,
                                      uintptr_t n_u,
                                      uintptr_t n_y,
                                      uintptr_t l,
                                      uintptr_t l0,
                                      struct DdpSignalMatrix **out);

void ddp_signal_matrix_free(struct DdpSignalMatrix *sm);

/**
 * Rows and columns of `Z`.
 */
enum DdpStatus ddp_signal_matrix_dims(const struct DdpSignalMatrix *sm,
                                      uintptr_t *rows,
                                      uintptr_t *cols);

/**
 * Predicts `n_y*Lp` future outputs into `y_out`. `u_ini`, `y_ini` and `u`
 * hold `n_u*L0`, `n_y*L0` and `n_u*Lp` values. `model` may be null unless
 * `predictor` is `DDP_PREDICTOR_MSE_MB`.
 */
enum DdpStatus ddp_predict(const struct DdpSignalMatrix *sm,
                           uint32_t predictor,
                           const struct DdpModel *model,
                           double sigma2,
                           const double *u_ini,
                           const double *y_ini,
                           const double *u,
                           double *y_out);

/**
 * Prediction plus its confidence region at level `p`. Writes the
 * prediction (`d = n_y*Lp` values), the region center (`d`), the row-major
 * covariance (`d*d`) and the radius.
 */
enum DdpStatus ddp_predict_region(const struct DdpSignalMatrix *sm,
                                  uint32_t predictor,
                                  uint32_t region_source,
                                  const struct DdpModel *model,
                                  double sigma2,
                                  const double *u_ini,
                                  const double *y_ini,
                                  const double *u,
                                  double p,
                                  double *y_out,
                                  double *center_out,
                                  double *sigma_out,
                                  double *mu_p_out);

/**
 * Sets `*inside` to 1 when `point` lies in the ellipsoid
 * `(x - center)^T sigma^{-1} (x - center) <= mu_p`, else 0.
 */
enum DdpStatus ddp_region_contains(const double *center,
                                   const double *sigma,
                                   uintptr_t dim,
                                   double mu_p,
                                   const double *point,
                                   int32_t *inside);

/**
 * Chi-squared CDF; NaN when `dof` is zero.
 */
double ddp_chi2_cdf(double x, uint32_t dof);

/**
 * Chi-squared quantile; NaN unless `0 < p < 1` and `dof > 0`.
 */
double ddp_chi2_quantile(double p, uint32_t dof);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDPREDICT_H */
