#ifndef MIMDEPTH_H
#define MIMDEPTH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MimdStatus {
  MIMD_STATUS_OK = 0,
  MIMD_STATUS_NULL_POINTER = 1,
  MIMD_STATUS_INVALID_ARGUMENT = 2,
  MIMD_STATUS_IO = 3,
  MIMD_STATUS_CONFIG = 4,
  MIMD_STATUS_DATA = 5,
  MIMD_STATUS_NON_FINITE = 6,
  MIMD_STATUS_BUFFER_TOO_SMALL = 7,
  MIMD_STATUS_INTERNAL = 8,
} MimdStatus;

/**
 * Synthetic triplet dataset held in memory.
 */
typedef struct MimdDataset MimdDataset;

/**
 * Trained or freshly initialised depth and ego-motion networks.
 */
typedef struct MimdModel MimdModel;

/**
 * Depth-quality scores of one prediction.
 */
typedef struct MimdDepthMetrics {
  double rmse;
  double delta1;
  double delta2;
  double delta3;
  double scale;
  size_t pixels;
} MimdDepthMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mimd_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mimd_last_error(char *buf, size_t len);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MimdStatus mimd_model_load(const char *path, struct MimdModel **out);

/**
 * Randomly initialised toy-config model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MimdStatus mimd_model_init(uint64_t seed, struct MimdModel **out);

/**
 * # Safety
 * `model` must be a valid handle and `path` a NUL-terminated string.
 */
enum MimdStatus mimd_model_save(const struct MimdModel *model, const char *path);

/**
 * Input resolution the model expects.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MimdStatus mimd_model_input_size(const struct MimdModel *model, size_t *width, size_t *height);

/**
 * Total trainable parameter count.
 *
 * # Safety
 * `model` must be a valid handle.
 */
size_t mimd_model_num_params(const struct MimdModel *model);

/**
 * Predict depth for one image; `depth` receives `width × height` values.
 *
 * # Safety
 * `rgb` must hold `width·height·3` values and `depth` `width·height`.
 */
enum MimdStatus mimd_model_predict(const struct MimdModel *model,
                                   const double *rgb,
                                   size_t width,
                                   size_t height,
                                   double *depth);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void mimd_model_free(struct MimdModel *model);

/**
 * Render `triplets` synthetic triplets at `width × height` (focal length
 * scaled with the width).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MimdStatus mimd_dataset_generate(uint64_t seed,
                                      size_t triplets,
                                      size_t width,
                                      size_t height,
                                      struct MimdDataset **out);

/**
 * Load a dataset directory written by `gen-data` or [`mimd_dataset_write`].
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MimdStatus mimd_dataset_load(const char *dir, struct MimdDataset **out);

/**
 * # Safety
 * `ds` must be a valid handle and `dir` a NUL-terminated string.
 */
enum MimdStatus mimd_dataset_write(const struct MimdDataset *ds, const char *dir);

/**
 * Number of triplets, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a valid handle.
 */
size_t mimd_dataset_len(const struct MimdDataset *ds);

/**
 * Copy the centre frame (`rgb`, `w·h·3`) and its ground-truth depth
 * (`depth`, `w·h`) of triplet `index`; either output may be null.
 *
 * # Safety
 * Non-null outputs must have room for the values above.
 */
enum MimdStatus mimd_dataset_triplet(const struct MimdDataset *ds,
                                     size_t index,
                                     double *rgb,
                                     double *depth);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void mimd_dataset_free(struct MimdDataset *ds);

/**
 * Train on `ds` with a TOML config (null or empty for defaults; run paths
 * are ignored). The final probe-loss ratio is written to `probe_ratio` if
 * non-null.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` must be valid.
 */
enum MimdStatus mimd_train(const char *config_toml,
                           const struct MimdDataset *ds,
                           struct MimdModel **out,
                           double *probe_ratio);

/**
 * RMSE and δ accuracies of `pred` against `gt` (both `width × height`),
 * clamped to `[0.1, 100]`, optionally median-scaled.
 *
 * # Safety
 * `pred` and `gt` must hold `width·height` values; `out` must be valid.
 */
enum MimdStatus mimd_depth_metrics(const double *pred,
                                   const double *gt,
                                   size_t width,
                                   size_t height,
                                   bool median_scaling,
                                   struct MimdDepthMetrics *out);

/**
 * Apply corruption `kind` (e.g. "gaussian_noise") at `severity` 1..=5.
 *
 * # Safety
 * `rgb_in` and `rgb_out` must hold `width·height·3` values; they may alias.
 */
enum MimdStatus mimd_corrupt(const double *rgb_in,
                             size_t width,
                             size_t height,
                             const char *kind,
                             uint8_t severity,
                             uint64_t seed,
                             double *rgb_out);

/**
 * Mask grid for a `height × width` image with `size`-pixel cells; cells
 * are written row-major to `cells` (1 = masked) and the grid shape to
 * `rows`/`cols`. Fails with `BufferTooSmall` if `capacity` is short.
 *
 * # Safety
 * `cells` must have `capacity` writable bytes; `rows`/`cols` must be valid.
 */
enum MimdStatus mimd_mask(const char *strategy,
                          size_t size,
                          double ratio,
                          double aspect,
                          uint64_t seed,
                          size_t height,
                          size_t width,
                          uint8_t *cells,
                          size_t capacity,
                          size_t *rows,
                          size_t *cols);

/**
 * Attack iteration count `min(ε + 4, ⌈1.25 ε⌉)`.
 */
size_t mimd_attack_iterations(double epsilon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMDEPTH_H */
