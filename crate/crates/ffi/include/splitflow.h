#ifndef SPLITFLOW_H
#define SPLITFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Splitting scheme for [`sf_sample_coupled`].
 */
typedef enum SfScheme {
  SF_SCHEME_LIE_TROTTER = 0,
  SF_SCHEME_STRANG = 1,
} SfScheme;

/**
 * Result code of every fallible call. Values match the CLI exit codes where
 * both exist.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_FAILURE = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_MISSING_ARTIFACT = 3,
  SF_STATUS_NON_FINITE = 4,
  SF_STATUS_NULL_POINTER = 5,
  SF_STATUS_PANIC = 6,
} SfStatus;

/**
 * A trained network loaded from a JSON checkpoint.
 */
typedef struct SfNet SfNet;

/**
 * Joint samples, row-major, `f` columns first.
 */
typedef struct SfSampleSet SfSampleSet;

/**
 * The three statistics of one comparison.
 */
typedef struct SfMetrics {
  double w1;
  double mmd;
  double energy;
} SfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len` bytes) and returns the full message length
 * excluding the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sf_last_error_message(char *buf, size_t len);

/**
 * Loads a network checkpoint written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SfStatus sf_net_load(const char *path, struct SfNet **out);

/**
 * Width of the network's output, i.e. of the field it drives.
 *
 * # Safety
 * `net` must be null or a live handle from [`sf_net_load`].
 */
size_t sf_net_output_dim(const struct SfNet *net);

/**
 * # Safety
 * `net` must be null or a handle from [`sf_net_load`] not yet freed.
 */
void sf_net_free(struct SfNet *net);

/**
 * Runs the coupled splitting sampler with velocity networks for `f` and `g`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SfStatus sf_sample_coupled(const struct SfNet *net_f,
                                const struct SfNet *net_g,
                                size_t n_samples,
                                size_t n_steps,
                                enum SfScheme scheme,
                                uint64_t seed,
                                struct SfSampleSet **out);

/**
 * Builds a sample set from `n * (dim_f + dim_g)` row-major values.
 *
 * # Safety
 * `points` must point to that many readable doubles; `out` must be writable.
 */
enum SfStatus sf_sample_set_new(const double *points,
                                size_t n,
                                size_t dim_f,
                                size_t dim_g,
                                struct SfSampleSet **out);

/**
 * Reads a sample CSV as written by the `sample` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SfStatus sf_sample_set_read_csv(const char *path, struct SfSampleSet **out);

/**
 * Writes the set as CSV. Refuses to overwrite a different existing file.
 *
 * # Safety
 * `set` must be live; `path` must be a NUL-terminated string.
 */
enum SfStatus sf_sample_set_write_csv(const struct SfSampleSet *set, const char *path);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `set` must be null or live.
 */
size_t sf_sample_set_len(const struct SfSampleSet *set);

/**
 * Columns per sample (`dim_f + dim_g`), 0 for a null handle.
 *
 * # Safety
 * `set` must be null or live.
 */
size_t sf_sample_set_dim(const struct SfSampleSet *set);

/**
 * Copies the row-major points into `buf`, which must hold `len * dim` doubles.
 *
 * # Safety
 * `set` must be live; `buf` must point to `capacity` writable doubles.
 */
enum SfStatus sf_sample_set_copy_points(const struct SfSampleSet *set,
                                        double *buf,
                                        size_t capacity);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void sf_sample_set_free(struct SfSampleSet *set);

/**
 * Exact W1 between two sets of equal size.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SfStatus sf_w1_exact(const struct SfSampleSet *a, const struct SfSampleSet *b, double *out);

/**
 * W1 (after subsampling both sets to `min(|a|, |b|, w1_subsample)` rows
 * with `seed`), MMD with the median bandwidth, and energy distance.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SfStatus sf_metrics(const struct SfSampleSet *a,
                         const struct SfSampleSet *b,
                         size_t w1_subsample,
                         uint64_t seed,
                         struct SfMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLITFLOW_H */
