/* C ABI for the dizo forward-pass-only optimizers. */

#ifndef DIZO_H
#define DIZO_H

/* Generated by cbindgen from dizo-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every API call.
typedef enum DizoStatus {
  DIZO_STATUS_OK = 0,
  DIZO_STATUS_NULL_POINTER = 1,
  DIZO_STATUS_INVALID_ARGUMENT = 2,
  DIZO_STATUS_CONFIG_ERROR = 3,
  DIZO_STATUS_STRUCTURE_ERROR = 4,
  DIZO_STATUS_NUMERIC_ERROR = 5,
  DIZO_STATUS_IO_ERROR = 6,
  DIZO_STATUS_FORMAT_ERROR = 7,
  DIZO_STATUS_PANIC = 8,
} DizoStatus;

// A loss oracle bundled with its dataset and the task's default
// projection roles. Opaque.
typedef struct DizoOracle DizoOracle;

// A finished run: records, final parameters, counters. Opaque.
typedef struct DizoRun DizoRun;

// Training hyperparameters (POD mirror of the core config).
typedef struct DizoTrainConfig {
  uint64_t steps;
  double lr;
  // false = constant schedule, true = linear decay to zero.
  bool lr_linear_decay;
  double eps;
  uint64_t q;
  uint64_t batch_size;
  uint64_t seed;
  uint64_t eval_every;
} DizoTrainConfig;

// Projection hyperparameters for projected (DiZO) runs.
typedef struct DizoProjectionConfig {
  // Clip width τ in (0, 1).
  double tau;
  // Projection cycle length in steps.
  uint64_t kappa;
  // Smoothing scalar ε′ for γ-space probes.
  double eps;
  uint64_t inner_iters;
  double inner_lr;
  // Store the anchor as 8-bit affine codes instead of f64.
  bool anchor_q8;
} DizoProjectionConfig;

// One recorded iteration (per-layer detail is available via CSV export).
typedef struct DizoRecord {
  uint64_t iteration;
  double loss_clean;
  double loss_probe;
  double lr;
  double step_movement;
  double stability_slack;
} DizoRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated version string of the library. Static; do not free.
const char *dizo_version(void);

// Copies the calling thread's last error message (NUL-terminated) into
// `buf`. Returns the full message length in bytes excluding the NUL;
// the copy is truncated if `cap` is too small. A zero `cap` only
// measures.
//
// # Safety
// `buf` must point to `cap` writable bytes (or be ignored when cap = 0).
uintptr_t dizo_last_error(char *buf, uintptr_t cap);

// Heterogeneous quadratic benchmark: four equal-dim layers whose optimum
// radii span 10×, with a per-batch center jitter (0 for a deterministic
// objective).
enum DizoStatus dizo_oracle_quadratic(uint64_t dim_per_layer,
                                      uint64_t seed,
                                      double jitter,
                                      uint64_t n_batches,
                                      struct DizoOracle **out);

// Multinomial logistic regression on Gaussian blobs.
enum DizoStatus dizo_oracle_logistic_blobs(uint64_t features,
                                           uint64_t classes,
                                           uint64_t model_seed,
                                           uint64_t n_batches,
                                           uint64_t batch_size,
                                           double separation,
                                           uint64_t data_seed,
                                           struct DizoOracle **out);

// Two-layer tanh MLP on Gaussian blobs.
enum DizoStatus dizo_oracle_mlp_blobs(uint64_t features,
                                      uint64_t hidden,
                                      uint64_t classes,
                                      uint64_t model_seed,
                                      uint64_t n_batches,
                                      uint64_t batch_size,
                                      double separation,
                                      uint64_t data_seed,
                                      struct DizoOracle **out);

// Single-block self-attention classifier on token sequences.
enum DizoStatus dizo_oracle_attention_tokens(uint64_t d_model,
                                             uint64_t classes,
                                             uint64_t vocab,
                                             uint64_t seq_len,
                                             uint64_t model_seed,
                                             uint64_t n_batches,
                                             uint64_t batch_size,
                                             uint64_t data_seed,
                                             struct DizoOracle **out);

// Total trainable parameter count of the oracle's model.
//
// # Safety
// `oracle` must be a live handle from a constructor; `out` must be valid.
enum DizoStatus dizo_oracle_total_dim(const struct DizoOracle *oracle, uint64_t *out);

// # Safety
// `oracle` must come from a constructor and not be used afterwards.
void dizo_oracle_free(struct DizoOracle *oracle);

// Plain two-point ZO-SGD over the oracle's dataset.
//
// # Safety
// All pointers must be valid; the run handle must be freed with
// `dizo_run_free`.
enum DizoStatus dizo_run_zo_sgd(const struct DizoOracle *oracle,
                                const struct DizoTrainConfig *config,
                                struct DizoRun **out);

// Projected run: ZO-SGD plus an anchor-based projection cycle every κ
// steps. The anchor snapshots the task's default projection layers at
// the initial parameters.
//
// # Safety
// All pointers must be valid; the run handle must be freed with
// `dizo_run_free`.
enum DizoStatus dizo_run_dizo(const struct DizoOracle *oracle,
                              const struct DizoTrainConfig *config,
                              const struct DizoProjectionConfig *projection,
                              struct DizoRun **out);

// Number of recorded iterations.
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_record_count(const struct DizoRun *run, uintptr_t *out);

// Fetches record `index`.
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_record(const struct DizoRun *run, uintptr_t index, struct DizoRecord *out);

// Clean loss of the last record.
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_final_loss(const struct DizoRun *run, double *out);

// Training forward passes the run consumed.
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_forward_passes(const struct DizoRun *run, uint64_t *out);

// Iterations whose movement exceeded the stability bound (0 on healthy
// runs).
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_stability_violations(const struct DizoRun *run, uint64_t *out);

// Whether the run stopped early on a numeric failure.
//
// # Safety
// `run` must be a live handle; `out` must be valid.
enum DizoStatus dizo_run_aborted(const struct DizoRun *run, bool *out);

// Writes the run's records as CSV (same schema as the CLI harness).
//
// # Safety
// `run` must be a live handle; `path` must be a NUL-terminated string.
enum DizoStatus dizo_run_write_csv(const struct DizoRun *run, const char *path);

// Saves the final parameters as a checkpoint file.
//
// # Safety
// `run` must be a live handle; `path` must be a NUL-terminated string.
enum DizoStatus dizo_run_save_checkpoint(const struct DizoRun *run, const char *path);

// # Safety
// `run` must come from a run function and not be used afterwards.
void dizo_run_free(struct DizoRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIZO_H */
