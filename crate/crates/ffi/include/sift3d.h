#ifndef SIFT3D_H
#define SIFT3D_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum Sift3dStatus {
  SIFT3D_STATUS_OK = 0,
  SIFT3D_STATUS_NULL_POINTER = 1,
  SIFT3D_STATUS_INVALID_ARGUMENT = 2,
  SIFT3D_STATUS_IO = 3,
  SIFT3D_STATUS_PARSE = 4,
  SIFT3D_STATUS_UNSUPPORTED_VERSION = 5,
  SIFT3D_STATUS_OUT_OF_DOMAIN = 6,
  SIFT3D_STATUS_NO_ORIENTATION = 7,
  SIFT3D_STATUS_INITIALIZATION_FAILED = 8,
  SIFT3D_STATUS_DEGENERATE = 9,
  SIFT3D_STATUS_CONFIG = 10,
  SIFT3D_STATUS_PANIC = 11,
} Sift3dStatus;

/**
 * Orientation frame estimator for [`sift3d_extract`].
 */
typedef enum Sift3dEstimator {
  SIFT3D_ESTIMATOR_MAX_GRADIENT = 0,
  SIFT3D_ESTIMATOR_STRUCTURE_TENSOR = 1,
} Sift3dEstimator;

/**
 * Registration variant for [`sift3d_register`].
 */
typedef enum Sift3dVariant {
  SIFT3D_VARIANT_CPD = 0,
  SIFT3D_VARIANT_SIFT_CPD = 1,
  SIFT3D_VARIANT_SIFT_CPD_STAR = 2,
  SIFT3D_VARIANT_ICP20 = 3,
  SIFT3D_VARIANT_ICP100 = 4,
} Sift3dVariant;

/**
 * Opaque feature set.
 */
typedef struct Sift3dFeatures Sift3dFeatures;

/**
 * Opaque scalar volume.
 */
typedef struct Sift3dVolume Sift3dVolume;

/**
 * `x -> scale * R x + t`, with `R` stored row-major.
 */
typedef struct Sift3dTransform {
  double rotation[9];
  double scale;
  double translation[3];
} Sift3dTransform;

typedef struct Sift3dFeatureGeometry {
  double x[3];
  double sigma;
  /**
   * Frame axes as columns, row-major.
   */
  double frame[9];
  int8_t sign;
  bool border;
} Sift3dFeatureGeometry;

typedef struct Sift3dRegistrationReport {
  /**
   * Moving-to-fixed transform.
   */
  struct Sift3dTransform transform;
  size_t matches;
  size_t inliers;
  size_t iterations;
  bool converged;
  double lambda_sq_final;
  double runtime_s;
} Sift3dRegistrationReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *sift3d_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sift3d_version(void);

/**
 * Reads a `.meta` (raw_meta) or `.nii` (NIfTI-1) volume.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum Sift3dStatus sift3d_volume_read(const char *path, struct Sift3dVolume **out);

/**
 * Copies `dims[0]*dims[1]*dims[2]` voxels (x fastest) into a new volume.
 *
 * # Safety
 * `dims`, `spacing` and `origin` point to 3 elements; `data` to `len` doubles.
 */
enum Sift3dStatus sift3d_volume_from_data(const size_t *dims,
                                          const double *spacing,
                                          const double *origin,
                                          const double *data,
                                          size_t len,
                                          struct Sift3dVolume **out);

/**
 * Seeded Gaussian-blob phantom centered on the world origin.
 *
 * # Safety
 * `dims` and `spacing` point to 3 elements; `out` must be writable.
 */
enum Sift3dStatus sift3d_volume_phantom(uint64_t seed,
                                        size_t num_blobs,
                                        const size_t *dims,
                                        const double *spacing,
                                        struct Sift3dVolume **out);

/**
 * Resamples `volume` by `transform` onto its own grid (zero fill outside).
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum Sift3dStatus sift3d_volume_resample(const struct Sift3dVolume *volume,
                                         const struct Sift3dTransform *transform,
                                         struct Sift3dVolume **out);

/**
 * # Safety
 * `volume` must be live; `dims` points to 3 writable elements.
 */
enum Sift3dStatus sift3d_volume_dims(const struct Sift3dVolume *volume, size_t *dims);

/**
 * Negates every voxel in place.
 *
 * # Safety
 * `volume` must be live and not shared with another thread.
 */
enum Sift3dStatus sift3d_volume_negate(struct Sift3dVolume *volume);

/**
 * # Safety
 * `volume` must come from this library and not be used afterwards. Null is ignored.
 */
void sift3d_volume_free(struct Sift3dVolume *volume);

/**
 * Extracts features with default settings and the chosen frame estimator.
 *
 * # Safety
 * `volume` must be live; `out` must be writable.
 */
enum Sift3dStatus sift3d_extract(const struct Sift3dVolume *volume,
                                 enum Sift3dEstimator estimator,
                                 struct Sift3dFeatures **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum Sift3dStatus sift3d_features_read(const char *path, struct Sift3dFeatures **out);

/**
 * # Safety
 * `features` must be live; `path` and `source_id` NUL-terminated (`source_id` may be null).
 */
enum Sift3dStatus sift3d_features_write(const struct Sift3dFeatures *features,
                                        const char *path,
                                        const char *source_id);

/**
 * Number of features; 0 for a null handle.
 *
 * # Safety
 * `features` must be live or null.
 */
size_t sift3d_features_len(const struct Sift3dFeatures *features);

/**
 * # Safety
 * `features` must be live; `out` must be writable.
 */
enum Sift3dStatus sift3d_feature_geometry(const struct Sift3dFeatures *features,
                                          size_t index,
                                          struct Sift3dFeatureGeometry *out);

/**
 * # Safety
 * `features` must come from this library and not be used afterwards. Null is ignored.
 */
void sift3d_features_free(struct Sift3dFeatures *features);

/**
 * Registers `moving` onto `fixed` with default parameters.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum Sift3dStatus sift3d_register(const struct Sift3dFeatures *fixed,
                                  const struct Sift3dFeatures *moving,
                                  enum Sift3dVariant variant,
                                  struct Sift3dRegistrationReport *out);

/**
 * Seeded random transform with per-axis rotations of 10–30° and translations of 0–10 mm.
 *
 * # Safety
 * `out` must be writable.
 */
enum Sift3dStatus sift3d_transform_random(uint64_t seed, struct Sift3dTransform *out);

/**
 * # Safety
 * `transform` and `out` must be valid.
 */
enum Sift3dStatus sift3d_transform_inverse(const struct Sift3dTransform *transform,
                                           struct Sift3dTransform *out);

/**
 * Mean distance between the two transforms' images of `count` probe points
 * (`probes` holds `3 * count` doubles).
 *
 * # Safety
 * All pointers must be valid for the stated sizes.
 */
enum Sift3dStatus sift3d_point_registration_error(const struct Sift3dTransform *estimate,
                                                  const struct Sift3dTransform *truth,
                                                  const double *probes,
                                                  size_t count,
                                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIFT3D_H */
