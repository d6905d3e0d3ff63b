#ifndef CRITLAYER_H
#define CRITLAYER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum ClStatus {
  CL_STATUS_OK = 0,
  CL_STATUS_NULL_POINTER = 1,
  CL_STATUS_INVALID_ARGUMENT = 2,
  CL_STATUS_IO = 3,
  CL_STATUS_FORMAT = 4,
  CL_STATUS_OUT_OF_RANGE = 5,
  CL_STATUS_DEGENERATE = 6,
  CL_STATUS_NUMERIC = 7,
  CL_STATUS_BUFFER_TOO_SMALL = 8,
  CL_STATUS_PANIC = 9,
} ClStatus;

/**
 * A representation bundle.
 */
typedef struct ClBundle ClBundle;

/**
 * Pairwise CKA between all layers of a bundle.
 */
typedef struct ClCkaMatrix ClCkaMatrix;

/**
 * Windowed mean CKA per layer.
 */
typedef struct ClDeltaCurve ClDeltaCurve;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cl_version(void);

/**
 * Reads and validates a bundle directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ClStatus cl_bundle_read(const char *path, struct ClBundle **out);

/**
 * Builds a bundle from `num_layers` row-major `num_samples x hidden_sizes[l]`
 * f32 buffers.
 *
 * # Safety
 * `model_id` and `dataset_id` must be NUL-terminated strings.
 * `hidden_sizes` and `layers` must each hold `num_layers` entries, and
 * `layers[l]` must point to `num_samples * hidden_sizes[l]` floats.
 */
enum ClStatus cl_bundle_from_buffers(const char *model_id,
                                     const char *dataset_id,
                                     size_t num_layers,
                                     size_t num_samples,
                                     const size_t *hidden_sizes,
                                     const float *const *layers,
                                     struct ClBundle **out);

/**
 * Writes `bundle` to a directory, replacing an existing bundle there.
 *
 * # Safety
 * `bundle` must be a live handle; `path` a NUL-terminated string.
 */
enum ClStatus cl_bundle_write(const struct ClBundle *bundle, const char *path);

/**
 * # Safety
 * `bundle` must be a live handle or NULL.
 */
size_t cl_bundle_num_layers(const struct ClBundle *bundle);

/**
 * # Safety
 * `bundle` must be a live handle or NULL.
 */
size_t cl_bundle_num_samples(const struct ClBundle *bundle);

/**
 * Hidden size of `layer`, or 0 if the handle is NULL or the layer is out
 * of range.
 *
 * # Safety
 * `bundle` must be a live handle or NULL.
 */
size_t cl_bundle_hidden_size(const struct ClBundle *bundle, size_t layer);

/**
 * Writes the sha256 content hash (64 hex digits plus NUL) into `buf`.
 *
 * # Safety
 * `bundle` must be a live handle; `buf` must hold `capacity` bytes.
 */
enum ClStatus cl_bundle_content_hash(const struct ClBundle *bundle, char *buf, size_t capacity);

/**
 * # Safety
 * `bundle` must be a handle from this library, or NULL, and not freed before.
 */
void cl_bundle_free(struct ClBundle *bundle);

/**
 * Removes the top `k` components from `layer` and writes the cleaned
 * bundle to `path`.
 *
 * # Safety
 * `bundle` must be a live handle; `path` a NUL-terminated string.
 */
enum ClStatus cl_clean_and_write(const struct ClBundle *bundle,
                                 size_t layer,
                                 size_t k,
                                 const char *path);

/**
 * Linear CKA between row-major `n x d1` and `n x d2` f64 matrices.
 *
 * # Safety
 * `x1` must hold `n * d1` doubles, `x2` `n * d2`; `out` must be writable.
 */
enum ClStatus cl_linear_cka(const double *x1,
                            const double *x2,
                            size_t n,
                            size_t d1,
                            size_t d2,
                            double *out);

/**
 * # Safety
 * `bundle` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_pairwise_cka(const struct ClBundle *bundle, struct ClCkaMatrix **out);

/**
 * # Safety
 * `cka` must be a live handle or NULL.
 */
size_t cl_cka_num_layers(const struct ClCkaMatrix *cka);

/**
 * # Safety
 * `cka` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_cka_get(const struct ClCkaMatrix *cka, size_t i, size_t j, double *out);

/**
 * # Safety
 * `cka` must be a handle from this library, or NULL, and not freed before.
 */
void cl_cka_free(struct ClCkaMatrix *cka);

/**
 * # Safety
 * `cka` must be a live handle; `out` must be writable.
 */
enum ClStatus cl_delta_curve(const struct ClCkaMatrix *cka, size_t k, struct ClDeltaCurve **out);

/**
 * # Safety
 * `curve` must be a live handle or NULL.
 */
size_t cl_delta_len(const struct ClDeltaCurve *curve);

/**
 * Layer and value of the `index`-th curve entry.
 *
 * # Safety
 * `curve` must be a live handle; `layer` and `value` must be writable.
 */
enum ClStatus cl_delta_entry(const struct ClDeltaCurve *curve,
                             size_t index,
                             size_t *layer,
                             double *value);

/**
 * # Safety
 * `curve` must be a live handle; `lo` and `hi` must be writable.
 */
enum ClStatus cl_delta_valid_range(const struct ClDeltaCurve *curve, size_t *lo, size_t *hi);

/**
 * Writes the `m` lowest-delta layers into `layers_out`.
 *
 * # Safety
 * `curve` must be a live handle; `layers_out` must hold `capacity` entries.
 */
enum ClStatus cl_rank_critical_layers(const struct ClDeltaCurve *curve,
                                      size_t m,
                                      size_t *layers_out,
                                      size_t capacity);

/**
 * # Safety
 * `curve` must be a handle from this library, or NULL, and not freed before.
 */
void cl_delta_free(struct ClDeltaCurve *curve);

/**
 * Spearman correlation of two series of length `n` sharing labels
 * `0..n`.
 *
 * # Safety
 * `a` and `b` must each hold `n` doubles; `out` must be writable.
 */
enum ClStatus cl_spearman(const double *a, const double *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRITLAYER_H */
