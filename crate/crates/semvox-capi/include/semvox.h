/* C interface of the semvox LiDAR voxel masking toolkit. */

#ifndef SEMVOX_H
#define SEMVOX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SvxStatus {
  /**
   * Success.
   */
  SVX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SVX_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SVX_STATUS_INVALID_UTF8 = 2,
  /**
   * File could not be read or written.
   */
  SVX_STATUS_IO_ERROR = 3,
  /**
   * Input could not be parsed (JSON, config, file contents).
   */
  SVX_STATUS_PARSE_ERROR = 4,
  /**
   * The operation itself failed (budget, domain, dimension errors).
   */
  SVX_STATUS_DOMAIN_ERROR = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  SVX_STATUS_PANIC = 6,
} SvxStatus;

/**
 * Scan record layout for [`svx_pointcloud_read_scan`].
 */
typedef enum SvxScanLayout {
  /**
   * 4 little-endian f32 per point: x, y, z, intensity.
   */
  SVX_SCAN_LAYOUT_XYZI4 = 0,
  /**
   * 5 little-endian f32 per point: x, y, z, intensity, ring.
   */
  SVX_SCAN_LAYOUT_XYZIR5 = 1,
} SvxScanLayout;

/**
 * Opaque masked/visible voxel partition.
 */
typedef struct SvxMaskAssignment SvxMaskAssignment;

/**
 * Opaque labeled point cloud.
 */
typedef struct SvxPointCloud SvxPointCloud;

/**
 * Opaque sparse voxel grid.
 */
typedef struct SvxVoxelGrid SvxVoxelGrid;

/**
 * Voxel grid geometry. `max_points_per_voxel` of 0 means unlimited.
 */
typedef struct SvxVoxelConfig {
  double voxel_size[3];
  double range_min[3];
  double range_max[3];
  size_t max_points_per_voxel;
} SvxVoxelConfig;

/**
 * Per-group masking weights; weights below 1 protect a group.
 */
typedef struct SvxGroupWeights {
  double high;
  double medium;
  double low;
  double background;
} SvxGroupWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The library version as a static string.
 */
const char *svx_version(void);

/**
 * Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing `svx_*` call on the same thread.
 */
const char *svx_last_error_message(void);

/**
 * Frees a string returned by an `svx_*_to_json` function.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by this library and
 * not yet freed.
 */
void svx_string_free(char *s);

/**
 * The exact masked-voxel budget: round(rho * n), ties to even.
 */
size_t svx_mask_budget(double rho, size_t num_voxels);

/**
 * Generates a synthetic labeled scene from a scene-spec JSON document.
 *
 * # Safety
 * `spec_json` must be a valid NUL-terminated string; `out` must be a
 * valid pointer. On success `*out` owns a new cloud; free it with
 * [`svx_pointcloud_free`].
 */
enum SvxStatus svx_scene_generate(const char *spec_json, struct SvxPointCloud **out);

/**
 * Reads a binary scan file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be valid. On
 * success `*out` owns a new cloud.
 */
enum SvxStatus svx_pointcloud_read_scan(const char *path,
                                        enum SvxScanLayout layout,
                                        struct SvxPointCloud **out);

/**
 * Attaches point-wise labels from a label file (one byte per point) and,
 * when `map_to_detection` is set, maps them through the bundled
 * raw-to-detection class table.
 *
 * # Safety
 * `cloud` must be a live handle from this library; `path` a valid string.
 */
enum SvxStatus svx_pointcloud_attach_labels(struct SvxPointCloud *cloud,
                                            const char *path,
                                            bool map_to_detection);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t svx_pointcloud_num_points(const struct SvxPointCloud *cloud);

/**
 * # Safety
 * `cloud` must be null or a live handle; it is invalid afterwards.
 */
void svx_pointcloud_free(struct SvxPointCloud *cloud);

/**
 * Fills `out` with the full-scene default grid geometry.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SvxStatus svx_voxel_config_default(struct SvxVoxelConfig *out);

/**
 * Voxelizes a cloud. Out-of-range points are dropped (see
 * [`svx_voxelgrid_dropped_points`]).
 *
 * # Safety
 * `cloud` and `config` must be live/valid; `out` must be valid. On
 * success `*out` owns a new grid; free with [`svx_voxelgrid_free`].
 */
enum SvxStatus svx_voxelize(const struct SvxPointCloud *cloud,
                            const struct SvxVoxelConfig *config,
                            struct SvxVoxelGrid **out);

/**
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t svx_voxelgrid_num_voxels(const struct SvxVoxelGrid *grid);

/**
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t svx_voxelgrid_dropped_points(const struct SvxVoxelGrid *grid);

/**
 * Assigns importance groups. `levels_json` maps class names to "high",
 * "medium" or "low" (e.g. `{"car": "high"}`, all ten classes required);
 * pass null for the bundled reference assignment.
 *
 * # Safety
 * `grid` must be a live handle; `levels_json` null or a valid string.
 */
enum SvxStatus svx_voxelgrid_assign_groups(struct SvxVoxelGrid *grid, const char *levels_json);

/**
 * # Safety
 * `grid` must be null or a live handle; it is invalid afterwards.
 */
void svx_voxelgrid_free(struct SvxVoxelGrid *grid);

/**
 * Uniform random masking at ratio `rho`, deterministic per seed.
 *
 * # Safety
 * `grid` must be a live handle; `out` valid. On success `*out` owns a new
 * assignment; free with [`svx_mask_free`].
 */
enum SvxStatus svx_mask_uniform(const struct SvxVoxelGrid *grid,
                                double rho,
                                uint64_t seed,
                                struct SvxMaskAssignment **out);

/**
 * Class-targeted masking: voxels holding at least `tau` points of
 * detection class `class_id` are masked first, the budget is filled
 * uniformly. With `strict` set, a target set larger than the budget is an
 * error; otherwise it is subsampled.
 *
 * # Safety
 * `grid` must be a live handle; `out` valid.
 */
enum SvxStatus svx_mask_class_target(const struct SvxVoxelGrid *grid,
                                     uint8_t class_id,
                                     size_t tau,
                                     double rho,
                                     uint64_t seed,
                                     bool strict,
                                     struct SvxMaskAssignment **out);

/**
 * Importance-weighted masking across the four groups (the grid needs
 * groups; see [`svx_voxelgrid_assign_groups`]).
 *
 * # Safety
 * `grid` and `weights` must be live/valid; `out` valid.
 */
enum SvxStatus svx_mask_importance_weighted(const struct SvxVoxelGrid *grid,
                                            const struct SvxGroupWeights *weights,
                                            double rho,
                                            uint64_t seed,
                                            struct SvxMaskAssignment **out);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t svx_mask_num_masked(const struct SvxMaskAssignment *mask);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
double svx_mask_realized_ratio(const struct SvxMaskAssignment *mask);

/**
 * Copies the masked voxel indices as consecutive (x, y, z) triples.
 * `capacity` counts i32 slots; exactly `3 * svx_mask_num_masked` are
 * needed. Returns the number of slots written.
 *
 * # Safety
 * `mask` must be a live handle; `buffer` must point to at least
 * `capacity` writable i32 slots.
 */
size_t svx_mask_copy_masked_indices(const struct SvxMaskAssignment *mask,
                                    int32_t *buffer,
                                    size_t capacity);

/**
 * Serializes the assignment (policy echo, seed, masked indices, per-group
 * table) as JSON. Free the result with [`svx_string_free`].
 *
 * # Safety
 * `mask` must be a live handle; `out` valid.
 */
enum SvxStatus svx_mask_to_json(const struct SvxMaskAssignment *mask, char **out);

/**
 * Checks that `mask` partitions `grid` (every occupied voxel is exactly
 * one of masked or visible).
 *
 * # Safety
 * Both handles must be live.
 */
enum SvxStatus svx_mask_check_partition(const struct SvxVoxelGrid *grid,
                                        const struct SvxMaskAssignment *mask);

/**
 * # Safety
 * `mask` must be null or a live handle; it is invalid afterwards.
 */
void svx_mask_free(struct SvxMaskAssignment *mask);

/**
 * Directional Chamfer distance from `from` to `to`, both given as flat
 * xyz triples. `squared` selects squared Euclidean distances.
 *
 * # Safety
 * `from` must point to `3 * from_len` doubles, `to` to `3 * to_len`;
 * `out` must be valid.
 */
enum SvxStatus svx_chamfer_directional(const double *from,
                                       size_t from_len,
                                       const double *to,
                                       size_t to_len,
                                       bool squared,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMVOX_H */
