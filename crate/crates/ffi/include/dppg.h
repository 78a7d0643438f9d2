#ifndef DPPG_H
#define DPPG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call.
typedef enum DppgStatus {
  DPPG_STATUS_OK = 0,
  DPPG_STATUS_NULL_POINTER = 1,
  // Argument outside the domain of the operation.
  DPPG_STATUS_DOMAIN = 2,
  // Lengths or dimensions disagree.
  DPPG_STATUS_DIMENSION = 3,
  DPPG_STATUS_CONTRACT = 4,
  // Invalid configuration value.
  DPPG_STATUS_CONFIG = 5,
  // Unparseable file or string.
  DPPG_STATUS_PARSE = 6,
  DPPG_STATUS_IO = 7,
  DPPG_STATUS_INVALID_UTF8 = 8,
  DPPG_STATUS_PANIC = 9,
} DppgStatus;

// Which Gaussian mechanism certifies a budget.
typedef enum DppgMechanism {
  DPPG_MECHANISM_M1 = 1,
  DPPG_MECHANISM_M2 = 2,
} DppgMechanism;

// Clipping-norm rule that needs no Fisher matrix.
typedef enum DppgL2Rule {
  DPPG_L2_RULE_QUANTILE = 0,
  DPPG_L2_RULE_MARKOV = 1,
} DppgL2Rule;

// A symmetric positive semi-definite Fisher matrix.
typedef struct DppgFisher DppgFisher;

// A trained policy loaded from a checkpoint.
typedef struct DppgPolicy DppgPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len` bytes. Returns the full
// message length excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t dppg_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *dppg_version(void);

// Privacy budget of one release with noise multiplier `z` at failure probability `delta`.
//
// # Safety
// `out_epsilon` must be valid for writes; `out_mechanism` may be null.
enum DppgStatus dppg_epsilon_of_z(double z,
                                  double delta,
                                  double *out_epsilon,
                                  enum DppgMechanism *out_mechanism);

// Smallest noise multiplier achieving `epsilon` at `delta`.
//
// # Safety
// `out_z` must be valid for writes.
enum DppgStatus dppg_z_of_epsilon(double epsilon, double delta, double *out_z);

// Calibration constant of the classical Gaussian mechanism.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_c1(double delta, double *out);

// Calibration constant of the improved Gaussian mechanism.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_c2(double delta, double *out);

// CDF of the non-central chi-squared distribution.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_ncx2_cdf(size_t dof, double noncentrality, double x, double *out);

// Quantile of the non-central chi-squared distribution.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_ncx2_quantile(size_t dof, double noncentrality, double p, double *out);

// Clipping norm of an L2 trust-region rule.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_clip_norm_l2(enum DppgL2Rule rule,
                                  double alpha,
                                  double beta,
                                  double eta,
                                  double z,
                                  size_t d,
                                  double *out);

// Clipping norm of the KL trust-region rule for a Fisher matrix.
//
// # Safety
// `fisher` must come from [`dppg_fisher_new`]; `out` must be valid for writes.
enum DppgStatus dppg_clip_norm_kl(const struct DppgFisher *fisher,
                                  double alpha,
                                  double beta,
                                  double eta,
                                  double z,
                                  double *out);

// Clipping norm that keeps the objective gap within `lambda_slack` with probability `1 - beta2`.
//
// # Safety
// `out` must be valid for writes.
enum DppgStatus dppg_clip_norm_loss_gap(double lambda_slack,
                                        double beta2,
                                        double grad_norm,
                                        double eta,
                                        double z,
                                        double *out);

// Builds a Fisher matrix from `dim * dim` row-major entries.
//
// # Safety
// `data` must point to `dim * dim` doubles; `out` must be valid for writes.
enum DppgStatus dppg_fisher_new(const double *data, size_t dim, struct DppgFisher **out);

// Largest eigenvalue and trace of a Fisher matrix.
//
// # Safety
// `fisher` must come from [`dppg_fisher_new`]; both out pointers must be valid for writes.
enum DppgStatus dppg_fisher_spectrum(const struct DppgFisher *fisher,
                                     double *out_max_eigenvalue,
                                     double *out_trace);

// Releases a Fisher matrix; null is ignored.
//
// # Safety
// `fisher` must be null or come from [`dppg_fisher_new`] and not be used afterwards.
void dppg_fisher_free(struct DppgFisher *fisher);

// Loads a policy checkpoint written by the `dppg` command line.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum DppgStatus dppg_policy_load(const char *path, struct DppgPolicy **out);

// Observation length, action count and parameter count of a policy.
//
// # Safety
// `policy` must come from [`dppg_policy_load`]; null out pointers are skipped.
enum DppgStatus dppg_policy_shape(const struct DppgPolicy *policy,
                                  size_t *out_obs_dim,
                                  size_t *out_n_actions,
                                  size_t *out_param_dim);

// Action probabilities of `policy` at one observation.
//
// # Safety
// `obs` must hold `obs_len` doubles and `out_probs` `n_actions` writable doubles.
enum DppgStatus dppg_policy_probabilities(const struct DppgPolicy *policy,
                                          const double *obs,
                                          size_t obs_len,
                                          double *out_probs,
                                          size_t n_actions);

// Releases a policy; null is ignored.
//
// # Safety
// `policy` must be null or come from [`dppg_policy_load`] and not be used afterwards.
void dppg_policy_free(struct DppgPolicy *policy);

// Runs a training job described by a TOML config string and writes its
// artifacts into `out_dir`. Riverswim configs run the linear experiment
// with the configured variant; other environments train a neural policy.
// The final mean evaluation return is written to `out_final_return`.
//
// # Safety
// Both strings must be NUL-terminated; `out_final_return` may be null.
enum DppgStatus dppg_train(const char *config_toml, const char *out_dir, double *out_final_return);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPPG_H */
