#ifndef SCENE_LATENT_H
#define SCENE_LATENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_INPUT = 2,
  SL_STATUS_SHAPE = 3,
  SL_STATUS_PARSE = 4,
  SL_STATUS_VALIDATION = 5,
  SL_STATUS_NUMERIC = 6,
  SL_STATUS_DOMAIN = 7,
  SL_STATUS_IO = 8,
  SL_STATUS_BUFFER_TOO_SMALL = 9,
  SL_STATUS_PANIC = 10,
} SlStatus;

/**
 * Trained VAE loaded from a model file.
 */
typedef struct SlModel SlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sl_version(void);

/**
 * Loads a model file; on success `*out` owns a handle for [`sl_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlStatus sl_model_load(const char *path, struct SlModel **out);

/**
 * Releases a handle from [`sl_model_load`]. NULL is ignored.
 *
 * # Safety
 * `model` must come from `sl_model_load` and not be used afterwards.
 */
void sl_model_free(struct SlModel *model);

/**
 * Input length expected by the encoder (0 for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t sl_model_input_dim(const struct SlModel *model);

/**
 * Latent length produced by the encoder (0 for NULL).
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t sl_model_latent_dim(const struct SlModel *model);

/**
 * Posterior mean of an already-scaled input vector.
 *
 * # Safety
 * `input` must hold `input_len` doubles and `out` `out_len` doubles.
 */
enum SlStatus sl_model_encode(const struct SlModel *model,
                              const double *input,
                              size_t input_len,
                              double *out,
                              size_t out_len);

/**
 * Posterior mean of a raw embedding, scaled with the model's stored scaler.
 *
 * # Safety
 * `input` must hold `input_len` doubles and `out` `out_len` doubles.
 */
enum SlStatus sl_model_encode_raw(const struct SlModel *model,
                                  const double *input,
                                  size_t input_len,
                                  double *out,
                                  size_t out_len);

/**
 * Axial coordinates of the pointy-top hexagon containing `(lat, lon)`.
 *
 * # Safety
 * `q` and `r` must be valid pointers.
 */
enum SlStatus sl_hex_index(double lat, double lon, double edge, int64_t *q, int64_t *r);

/**
 * Centre of cell `(q, r)`.
 *
 * # Safety
 * `lat` and `lon` must be valid pointers.
 */
enum SlStatus sl_hex_centroid(int64_t q, int64_t r, double edge, double *lat, double *lon);

/**
 * Cosine distance in `[0, 2]`; zero-norm vectors are a domain error.
 *
 * # Safety
 * `x` and `y` must each hold `len` doubles; `out` must be valid.
 */
enum SlStatus sl_cosine_distance(const double *x, const double *y, size_t len, double *out);

/**
 * Linear-interpolation percentile, `0 < percentile < 100`.
 *
 * # Safety
 * `values` must hold `len` doubles; `out` must be valid.
 */
enum SlStatus sl_percentile(const double *values, size_t len, double percentile, double *out);

/**
 * Exact t-SNE with default settings. `points` is row-major `n × dim`;
 * `out` receives row-major `n × 2`.
 *
 * # Safety
 * `points` must hold `n * dim` doubles and `out` `out_len` doubles.
 */
enum SlStatus sl_tsne(const double *points,
                      size_t n,
                      size_t dim,
                      uint64_t seed,
                      double *out,
                      size_t out_len);

/**
 * Runs the full pipeline for a configuration file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum SlStatus sl_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENE_LATENT_H */
