#ifndef ENTROBOUND_H
#define ENTROBOUND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EbStatus {
  EB_STATUS_OK = 0,
  EB_STATUS_NULL_POINTER = 1,
  EB_STATUS_INVALID_ARGUMENT = 2,
  // The entropy range collapsed; the ratio is undefined.
  EB_STATUS_TRIVIAL = 3,
  // Minimization stopped before reaching the tolerance.
  EB_STATUS_NOT_CONVERGED = 4,
  EB_STATUS_SOLVER_FAILURE = 5,
  EB_STATUS_BUFFER_TOO_SMALL = 6,
  EB_STATUS_PANIC = 7,
} EbStatus;

// Fixed row and column marginals.
typedef struct EbMarginals EbMarginals;

typedef struct EbMaxResult EbMaxResult;

typedef struct EbMinResult EbMinResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *eb_last_error(void);

// Create marginals from `n` row and `m` column probabilities.
//
// # Safety
// `mu` and `nu` must point to `n` and `m` readable doubles; `out` must be
// writable.
enum EbStatus eb_marginals_new(const double *mu,
                               size_t n,
                               const double *nu,
                               size_t m,
                               struct EbMarginals **out);

// # Safety
// `marg` must be null or a handle from [`eb_marginals_new`] not yet freed.
void eb_marginals_free(struct EbMarginals *marg);

// Minimum entropy with relative tolerance `eps` (0 selects the default).
//
// The result handle is written even when the status is `NotConverged`.
//
// # Safety
// `marg` must be a live handle; `out` must be writable.
enum EbStatus eb_minimize(const struct EbMarginals *marg, double eps, struct EbMinResult **out);

// # Safety
// `r` must be null or a handle from [`eb_minimize`] not yet freed.
void eb_min_result_free(struct EbMinResult *r);

// True entropy of the returned plan, or NaN for a null handle.
//
// # Safety
// `r` must be null or a live handle.
double eb_min_result_entropy(const struct EbMinResult *r);

// Outer iterations performed, or 0 for a null handle.
//
// # Safety
// `r` must be null or a live handle.
size_t eb_min_result_iterations(const struct EbMinResult *r);

// Last relative gap, or NaN for a null handle.
//
// # Safety
// `r` must be null or a live handle.
double eb_min_result_final_eps(const struct EbMinResult *r);

// Copy the `n x m` plan row-major into `buf` of length `len`.
//
// # Safety
// `r` must be a live handle; `buf` must hold `len` writable doubles.
enum EbStatus eb_min_result_plan(const struct EbMinResult *r, double *buf, size_t len);

// Maximum entropy by damped Newton with KKT tolerance `kkt_tol` (0 selects
// the default), or in closed form when `analytic` is nonzero.
//
// # Safety
// `marg` must be a live handle; `out` must be writable.
enum EbStatus eb_maximize(const struct EbMarginals *marg,
                          double kkt_tol,
                          int32_t analytic,
                          struct EbMaxResult **out);

// # Safety
// `r` must be null or a handle from [`eb_maximize`] not yet freed.
void eb_max_result_free(struct EbMaxResult *r);

// # Safety
// `r` must be null or a live handle.
double eb_max_result_entropy(const struct EbMaxResult *r);

// # Safety
// `r` must be null or a live handle.
double eb_max_result_kkt_residual(const struct EbMaxResult *r);

// Condition number of the reduced Hessian at the maximizer.
//
// # Safety
// `r` must be null or a live handle.
double eb_max_result_condition(const struct EbMaxResult *r);

// # Safety
// `r` must be a live handle; `buf` must hold `len` writable doubles.
enum EbStatus eb_max_result_plan(const struct EbMaxResult *r, double *buf, size_t len);

// Scaled ratio `(h_data - h_max) / (h_min - h_max)`.
//
// # Safety
// `out` must be writable.
enum EbStatus eb_mi_ratio(double h_data, double h_min, double h_max, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTROBOUND_H */
