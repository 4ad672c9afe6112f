#ifndef RISMF_H
#define RISMF_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RismfSolver {
  RISMF_SOLVER_ALTERNATING_MINIMIZATION = 0,
  RISMF_SOLVER_GRADIENT_DESCENT = 1,
} RismfSolver;

typedef enum RismfStatus {
  RISMF_STATUS_OK = 0,
  RISMF_STATUS_NULL_POINTER = 1,
  RISMF_STATUS_INVALID_ARGUMENT = 2,
  RISMF_STATUS_DIMENSION_MISMATCH = 3,
  // Too few pilots or a numerically singular design.
  RISMF_STATUS_INFEASIBLE = 4,
  // The observations carry no energy.
  RISMF_STATUS_NO_SIGNAL = 5,
  // Output buffer shorter than required.
  RISMF_STATUS_BUFFER_TOO_SMALL = 6,
  RISMF_STATUS_PANIC = 7,
} RismfStatus;

// Solver settings for [`rismf_single_user_estimate`].
typedef struct RismfConfig RismfConfig;

// Result of [`rismf_single_user_estimate`].
typedef struct RismfEstimate RismfEstimate;

// Result of [`rismf_multi_user_estimate`].
typedef struct RismfMultiUserEstimate RismfMultiUserEstimate;

typedef struct RismfComplex {
  double re;
  double im;
} RismfComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rismf_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into the library on the same thread.
const char *rismf_last_error_message(void);

// New solver settings with the defaults of `solver`.
struct RismfConfig *rismf_config_new(enum RismfSolver solver);

// # Safety
// `config` must come from [`rismf_config_new`].
enum RismfStatus rismf_config_set_max_iters(struct RismfConfig *config, size_t max_iters);

// # Safety
// `config` must be NULL or come from [`rismf_config_new`], and not be used
// afterwards.
void rismf_config_free(struct RismfConfig *config);

// Single-user downlink estimate from `k` received samples.
//
// `pilots` is `n_bs x k`, `phases` is `m_ris x k`, `received` has `k`
// entries. A NULL `config` selects alternating minimization with defaults.
//
// # Safety
// Array arguments must point to the stated number of elements; `out` must
// be valid for a write.
enum RismfStatus rismf_single_user_estimate(size_t n_bs,
                                            size_t m_ris,
                                            size_t k,
                                            const struct RismfComplex *pilots,
                                            const struct RismfComplex *phases,
                                            const struct RismfComplex *received,
                                            double noise_var,
                                            const struct RismfConfig *config,
                                            struct RismfEstimate **out);

// # Safety
// `est` must come from [`rismf_single_user_estimate`]; `psi` must be valid
// for a write.
enum RismfStatus rismf_estimate_psi(const struct RismfEstimate *est, double *psi);

// Iterations used and whether the stopping rule was met.
//
// # Safety
// `est` must come from [`rismf_single_user_estimate`]; outputs must be
// valid for a write.
enum RismfStatus rismf_estimate_iterations(const struct RismfEstimate *est,
                                           size_t *iters,
                                           bool *converged);

// Writes the `m_ris x n_bs` channel estimate.
//
// # Safety
// `est` must come from [`rismf_single_user_estimate`]; `out` must hold
// `capacity` values.
enum RismfStatus rismf_estimate_channel(const struct RismfEstimate *est,
                                        struct RismfComplex *out,
                                        size_t capacity);

// Writes the `m_ris` entries of the RIS-side factor.
//
// # Safety
// `est` must come from [`rismf_single_user_estimate`]; `out` must hold
// `capacity` values.
enum RismfStatus rismf_estimate_a_bar(const struct RismfEstimate *est,
                                      struct RismfComplex *out,
                                      size_t capacity);

// # Safety
// `est` must be NULL or come from [`rismf_single_user_estimate`], and not
// be used afterwards.
void rismf_estimate_free(struct RismfEstimate *est);

// Two-stage uplink estimate for `q_users` users over `k` blocks of
// `t_symbols` symbols.
//
// `phases` is `m_ris x k`. `received` is `n_bs x (k * t_symbols)`, block
// `j` in columns `j t .. (j + 1) t`. `user_pilots` is `t_symbols x q_users`
// with orthogonal columns of energy `t_symbols`, reused in every block;
// NULL selects the DFT pilots.
//
// # Safety
// Array arguments must point to the stated number of elements; `out` must
// be valid for a write.
enum RismfStatus rismf_multi_user_estimate(size_t n_bs,
                                           size_t m_ris,
                                           size_t q_users,
                                           size_t t_symbols,
                                           size_t k,
                                           const struct RismfComplex *phases,
                                           const struct RismfComplex *received,
                                           const struct RismfComplex *user_pilots,
                                           double noise_var,
                                           struct RismfMultiUserEstimate **out);

// # Safety
// `est` must come from [`rismf_multi_user_estimate`]; outputs must be valid
// for a write.
enum RismfStatus rismf_multi_user_summary(const struct RismfMultiUserEstimate *est,
                                          double *psi,
                                          size_t *n_users,
                                          double *predicted_mse);

// Writes the `n_bs x m_ris` channel estimate of user `user`.
//
// # Safety
// `est` must come from [`rismf_multi_user_estimate`]; `out` must hold
// `capacity` values.
enum RismfStatus rismf_multi_user_channel(const struct RismfMultiUserEstimate *est,
                                          size_t user,
                                          struct RismfComplex *out,
                                          size_t capacity);

// # Safety
// `est` must be NULL or come from [`rismf_multi_user_estimate`], and not be
// used afterwards.
void rismf_multi_user_free(struct RismfMultiUserEstimate *est);

// `||h_true - h_hat||_F^2 / ||h_true||_F^2` for `rows x cols` matrices.
//
// # Safety
// Both arrays must hold `rows * cols` values; `out` must be valid for a
// write.
enum RismfStatus rismf_nmse(const struct RismfComplex *h_true,
                            const struct RismfComplex *h_hat,
                            size_t rows,
                            size_t cols,
                            double *out);

// Predicted uplink MSE of the RIS factor for an `m_ris x k` phase design.
//
// # Safety
// `phases` must hold `m_ris * k` values; `out` must be valid for a write.
enum RismfStatus rismf_predicted_mse(double noise_var,
                                     size_t t_symbols,
                                     const struct RismfComplex *phases,
                                     size_t m_ris,
                                     size_t k,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISMF_H */
