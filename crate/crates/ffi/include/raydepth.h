#ifndef RAYDEPTH_H
#define RAYDEPTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Dataset split selector.
 */
typedef enum RdSplit {
  RD_SPLIT_TRAIN = 0,
  RD_SPLIT_TEST = 1,
} RdSplit;

/**
 * Result of every call.
 */
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_POINTER = 1,
  RD_STATUS_INVALID_ARGUMENT = 2,
  RD_STATUS_IO = 3,
  RD_STATUS_PARSE = 4,
  RD_STATUS_NUMERICAL = 5,
  RD_STATUS_PANIC = 6,
} RdStatus;

/**
 * Opaque dataset handle.
 */
typedef struct RdDataset RdDataset;

/**
 * Opaque voxel field handle.
 */
typedef struct RdField RdField;

/**
 * Opaque trainer handle. Owns a copy of its dataset.
 */
typedef struct RdTrainer RdTrainer;

/**
 * Pinhole camera; `cam_to_world` is row-major 4x4 and the camera looks
 * along its local -z axis with +y up.
 */
typedef struct RdCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double cam_to_world[16];
} RdCamera;

/**
 * Test-view metrics of a trainer.
 */
typedef struct RdMetrics {
  uint64_t iteration;
  double psnr;
  double ssim;
  double depth_err_pct;
  double mean_depth_var;
} RdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *rd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rd_version(void);

/**
 * Renders a synthetic scene (`"sphere"` or `"sphere-plane"`) into a new
 * dataset. `sfm_noise` is the simulated SfM point noise; 0 gives exact points.
 *
 * # Safety
 * `scene` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_dataset_generate(const char *scene,
                                  uint32_t n_train,
                                  uint32_t n_test,
                                  uint32_t resolution,
                                  double sfm_noise,
                                  uint64_t seed,
                                  struct RdDataset **out);

/**
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a valid pointer.
 */
enum RdStatus rd_dataset_load(const char *dir, struct RdDataset **out);

/**
 * # Safety
 * `ds` must come from this library and `dir` be a NUL-terminated path.
 */
enum RdStatus rd_dataset_save(const struct RdDataset *ds, const char *dir);

/**
 * Number of views in a split.
 *
 * # Safety
 * `ds` must come from this library and `out` be a valid pointer.
 */
enum RdStatus rd_dataset_view_count(const struct RdDataset *ds, enum RdSplit split, uint32_t *out);

/**
 * Number of keypoint depth targets.
 *
 * # Safety
 * `ds` must come from this library and `out` be a valid pointer.
 */
enum RdStatus rd_dataset_keypoint_count(const struct RdDataset *ds, uint64_t *out);

/**
 * Camera and near/far bounds of view `index` in `split`.
 *
 * # Safety
 * `ds` must come from this library; output pointers must be valid.
 */
enum RdStatus rd_dataset_camera(const struct RdDataset *ds,
                                enum RdSplit split,
                                uint32_t index,
                                struct RdCamera *camera,
                                double *near,
                                double *far);

/**
 * # Safety
 * `ds` must come from this library or be null; it is invalid afterwards.
 */
void rd_dataset_free(struct RdDataset *ds);

/**
 * Creates a trainer over a copy of `ds`. `config_json` holds training
 * settings as JSON (missing keys take their defaults); null means defaults.
 *
 * # Safety
 * `ds` must come from this library, `config_json` be null or NUL-terminated
 * and `out` a valid pointer.
 */
enum RdStatus rd_trainer_new(const struct RdDataset *ds,
                             const char *config_json,
                             struct RdTrainer **out);

/**
 * Runs `steps` optimization steps; `last_loss` (nullable) receives the
 * total loss of the final step.
 *
 * # Safety
 * `tr` must come from this library; `last_loss` must be null or valid.
 */
enum RdStatus rd_trainer_step(struct RdTrainer *tr, uint32_t steps, double *last_loss);

/**
 * # Safety
 * `tr` must come from this library and `out` be a valid pointer.
 */
enum RdStatus rd_trainer_iteration(const struct RdTrainer *tr, uint64_t *out);

/**
 * Evaluates the current field on the dataset's test views.
 *
 * # Safety
 * `tr` must come from this library and `out` be a valid pointer.
 */
enum RdStatus rd_trainer_evaluate(const struct RdTrainer *tr, struct RdMetrics *out);

/**
 * Copies the trainer's current field into a new handle.
 *
 * # Safety
 * `tr` must come from this library and `out` be a valid pointer.
 */
enum RdStatus rd_trainer_field(const struct RdTrainer *tr, struct RdField **out);

/**
 * # Safety
 * `tr` must come from this library or be null; it is invalid afterwards.
 */
void rd_trainer_free(struct RdTrainer *tr);

/**
 * # Safety
 * `path` must be a NUL-terminated path and `out` a valid pointer.
 */
enum RdStatus rd_field_load(const char *path, struct RdField **out);

/**
 * # Safety
 * `field` must come from this library and `path` be a NUL-terminated path.
 */
enum RdStatus rd_field_save(const struct RdField *field, const char *path);

/**
 * Grid resolution as three node counts.
 *
 * # Safety
 * `field` must come from this library and `dims` point to three values.
 */
enum RdStatus rd_field_dims(const struct RdField *field, uint64_t *dims);

/**
 * Renders `camera` with `samples` midpoint samples per ray. `rgb` receives
 * `width * height * 3` values and `depth` (nullable) `width * height`
 * expected depths, both row-major from the top-left pixel.
 *
 * # Safety
 * `field` must come from this library, `camera` be valid and the output
 * buffers hold at least the sizes above.
 */
enum RdStatus rd_field_render(const struct RdField *field,
                              const struct RdCamera *camera,
                              double near,
                              double far,
                              uint32_t samples,
                              double *rgb,
                              double *depth);

/**
 * # Safety
 * `field` must come from this library or be null; it is invalid afterwards.
 */
void rd_field_free(struct RdField *field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAYDEPTH_H */
