#ifndef MGS_H
#define MGS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2..=4 match the CLI exit codes.
 */
typedef enum MgsStatus {
  MGS_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or zero size.
   */
  MGS_STATUS_INVALID_ARGUMENT = 1,
  MGS_STATUS_CONFIG = 2,
  /**
   * Numeric failure or violated precondition.
   */
  MGS_STATUS_NUMERIC = 3,
  /**
   * I/O or file-format error.
   */
  MGS_STATUS_IO = 4,
  MGS_STATUS_PANIC = 5,
} MgsStatus;

/**
 * Noise model and its schedule.
 */
typedef struct MgsEpsModel MgsEpsModel;

/**
 * Embedder `F` and relation net `g`.
 */
typedef struct MgsManifoldModel MgsManifoldModel;

/**
 * Guidance settings for [`mgs_guided_sample`].
 */
typedef struct MgsGuidanceParams {
  double lambda;
  /**
   * Number of initial sampler steps that are guided.
   */
  size_t guidance_steps;
  size_t batch_size;
  /**
   * Nonzero: balanced target from the reference; zero: a random reference batch.
   */
  uint8_t balanced;
  uint8_t skip_eps_jacobian;
} MgsGuidanceParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty if none). Valid
 * until the next failing call on the same thread.
 */
const char *mgs_last_error(void);

/**
 * Loads a noise-model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgsStatus mgs_eps_load(const char *path, struct MgsEpsModel **out);

/**
 * # Safety
 * `model` must come from [`mgs_eps_load`] and not be used afterwards. Null is ignored.
 */
void mgs_eps_free(struct MgsEpsModel *model);

/**
 * Data dimension of the model, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mgs_eps_data_dim(const struct MgsEpsModel *model);

/**
 * Diffusion steps of the model's schedule, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mgs_eps_schedule_steps(const struct MgsEpsModel *model);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgsStatus mgs_manifold_load(const char *path, struct MgsManifoldModel **out);

/**
 * # Safety
 * `model` must come from [`mgs_manifold_load`] and not be used afterwards. Null is ignored.
 */
void mgs_manifold_free(struct MgsManifoldModel *model);

/**
 * Unguided samples: `n` rows written to `out` (`n * data_dim` doubles).
 * `kind` is "ancestral" or "deterministic".
 *
 * # Safety
 * `model` must be a live handle, `kind` NUL-terminated and `out` large enough.
 */
enum MgsStatus mgs_sample(const struct MgsEpsModel *model,
                          const char *kind,
                          size_t steps,
                          uint64_t seed,
                          size_t n,
                          double *out);

/**
 * Guided samples: the target relation matrix is estimated from
 * `reference` (`ref_rows x data_dim`), then `total` rows are drawn in
 * batches of `params.batch_size`. Batch noise matches [`mgs_sample_batches`]
 * with the same seed, so the two are directly comparable.
 *
 * # Safety
 * Handles must be live, `reference` must hold `ref_rows * data_dim`
 * doubles and `out` room for `total * data_dim`.
 */
enum MgsStatus mgs_guided_sample(const struct MgsEpsModel *eps,
                                 const struct MgsManifoldModel *manifold,
                                 const double *reference,
                                 size_t ref_rows,
                                 struct MgsGuidanceParams params,
                                 const char *kind,
                                 size_t steps,
                                 uint64_t seed,
                                 size_t total,
                                 double *out);

/**
 * Unguided counterpart of [`mgs_guided_sample`]: `total` rows in batches of `batch_size`.
 *
 * # Safety
 * `eps` must be a live handle, `kind` NUL-terminated and `out` large enough.
 */
enum MgsStatus mgs_sample_batches(const struct MgsEpsModel *eps,
                                  const char *kind,
                                  size_t steps,
                                  uint64_t seed,
                                  size_t batch_size,
                                  size_t total,
                                  double *out);

/**
 * Sliced 2-Wasserstein distance between two point sets of dimension `dim`.
 *
 * # Safety
 * `a`, `b` must hold `na * dim` and `nb * dim` doubles; `out` must be valid.
 */
enum MgsStatus mgs_sliced_wasserstein(const double *a,
                                      size_t na,
                                      const double *b,
                                      size_t nb,
                                      size_t dim,
                                      size_t projections,
                                      uint64_t seed,
                                      double *out);

/**
 * Energy distance between two point sets.
 *
 * # Safety
 * As for [`mgs_sliced_wasserstein`].
 */
enum MgsStatus mgs_energy_distance(const double *a,
                                   size_t na,
                                   const double *b,
                                   size_t nb,
                                   size_t dim,
                                   double *out);

/**
 * Mean distance from each real sample to its nearest other sample.
 *
 * # Safety
 * `real` must hold `n * dim` doubles; `out` must be valid.
 */
enum MgsStatus mgs_avg_nn_distance(const double *real, size_t n, size_t dim, double *out);

/**
 * For each real sample, the number of generated samples within `radius`
 * (closed ball). `counts` receives `n_real` values.
 *
 * # Safety
 * Buffers must hold `n_real * dim`, `n_gen * dim` and `n_real` elements.
 */
enum MgsStatus mgs_neighbor_counts(const double *real,
                                   size_t n_real,
                                   const double *generated,
                                   size_t n_gen,
                                   size_t dim,
                                   double radius,
                                   size_t *counts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGS_H */
