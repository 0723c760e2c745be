#ifndef AIMC_FFI_H
#define AIMC_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AimcStatus {
  AIMC_STATUS_OK = 0,
  AIMC_STATUS_NULL_POINTER = 1,
  AIMC_STATUS_INVALID_CONFIG = 2,
  AIMC_STATUS_SHAPE = 3,
  AIMC_STATUS_MAPPING_DOMAIN = 4,
  AIMC_STATUS_TEMPORAL_ORDER = 5,
  AIMC_STATUS_NUMERICAL = 6,
  AIMC_STATUS_DEGENERATE_RANGE = 7,
  AIMC_STATUS_CALIBRATION_DATA = 8,
  AIMC_STATUS_TRAINING_FAILURE = 9,
  AIMC_STATUS_PARSE = 10,
  AIMC_STATUS_EMPTY_INPUT = 11,
  AIMC_STATUS_NOT_PROGRAMMED = 12,
  AIMC_STATUS_IO = 13,
  AIMC_STATUS_UTF8 = 14,
  AIMC_STATUS_PANIC = 15,
} AimcStatus;

/**
 * Forward pass mode for `aimc_tile_forward`.
 */
typedef enum AimcMode {
  /**
   * Exact `xᵀW`.
   */
  AIMC_MODE_IDEAL = 0,
  /**
   * Programmed devices read at a given time, IR drop and converters on.
   */
  AIMC_MODE_INFERENCE = 1,
} AimcMode;

/**
 * Opaque tile handle.
 */
typedef struct AimcTile AimcTile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a tile holding `weights` (`rows × cols`, row-major).
 *
 * `hardware_json` and `noise_json` are optional JSON documents (NULL for
 * defaults). Columns are normalized by their largest magnitude.
 *
 * # Safety
 * `weights` must point to `rows · cols` doubles, the strings must be NUL
 * terminated, and `out` must be writable.
 */
enum AimcStatus aimc_tile_new(const double *weights,
                              size_t rows,
                              size_t cols,
                              const char *hardware_json,
                              const char *noise_json,
                              struct AimcTile **out);

/**
 * Release a tile. NULL is ignored.
 *
 * # Safety
 * `tile` must come from `aimc_tile_new` and not be used afterwards.
 */
void aimc_tile_free(struct AimcTile *tile);

/**
 * Weight rows and columns of a tile.
 *
 * # Safety
 * `tile` must be a live handle; `rows` and `cols` must be writable.
 */
enum AimcStatus aimc_tile_shape(const struct AimcTile *tile, size_t *rows, size_t *cols);

/**
 * Set the DAC full-scale input.
 *
 * # Safety
 * `tile` must be a live handle.
 */
enum AimcStatus aimc_tile_set_input_range(struct AimcTile *tile, double input_range);

/**
 * Current DAC full-scale input.
 *
 * # Safety
 * `tile` must be a live handle and `out` writable.
 */
enum AimcStatus aimc_tile_input_range(const struct AimcTile *tile, double *out);

/**
 * Program the devices at time `at` (seconds) with the given seed.
 *
 * # Safety
 * `tile` must be a live handle.
 */
enum AimcStatus aimc_tile_program(struct AimcTile *tile, uint64_t seed, double at);

/**
 * Run `batch` input rows `x` (`batch × rows`) through the tile into `out`
 * (`batch × cols`). `t` is ignored in Ideal mode.
 *
 * # Safety
 * `tile` must be a live handle, `x` and `out` must hold the stated sizes.
 */
enum AimcStatus aimc_tile_forward(const struct AimcTile *tile,
                                  const double *x,
                                  size_t batch,
                                  enum AimcMode mode,
                                  double t,
                                  uint64_t seed,
                                  double *out);

/**
 * Calibrate the input range, then the column conductance caps, from
 * `n_samples` input rows (`n_samples × rows`). `calibration_json` may be
 * NULL for defaults. Leaves the tile unprogrammed.
 *
 * # Safety
 * `tile` must be a live handle and `samples` must hold the stated size.
 */
enum AimcStatus aimc_tile_calibrate(struct AimcTile *tile,
                                    const double *samples,
                                    size_t n_samples,
                                    const char *calibration_json);

/**
 * Tile count, mapped parameters and mean per-layer utilization of a layer
 * manifest on `tile_rows × tile_cols` tiles.
 *
 * # Safety
 * `manifest` must be NUL terminated; outputs must be writable.
 */
enum AimcStatus aimc_map_report(const char *manifest,
                                size_t tile_rows,
                                size_t tile_cols,
                                size_t *num_tiles,
                                uint64_t *mapped_params,
                                double *avg_utilization);

/**
 * Copy the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must hold `len` bytes, or be NULL with `len` 0.
 */
size_t aimc_last_error_message(char *buf, size_t len);

/**
 * Static name of a status code.
 */
const char *aimc_status_name(enum AimcStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIMC_FFI_H */
