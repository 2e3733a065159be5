#ifndef CRLM_H
#define CRLM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CrlmStatus {
  CrlmStatus_Ok = 0,
  CrlmStatus_NullPointer = 1,
  CrlmStatus_InvalidArgument = 2,
  CrlmStatus_Io = 3,
  CrlmStatus_Failed = 4,
  CrlmStatus_Panic = 5,
} CrlmStatus;

/**
 * Opaque label mask (0 background, 1 liver, 2 tumor, 3 spleen).
 */
typedef struct CrlmMask CrlmMask;

/**
 * Opaque image volume.
 */
typedef struct CrlmVolume CrlmVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t crlm_last_error(char *buf, uintptr_t len);

/**
 * Loads a NIfTI volume or a raw volume with JSON sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_volume` must be writable.
 */
enum CrlmStatus crlm_volume_load(const char *path, struct CrlmVolume **out_volume);

/**
 * Builds a volume from `dims[0]*dims[1]*dims[2]` intensities in x-fastest order.
 *
 * # Safety
 * `dims` and `spacing` must point to 3 values, `data` to `len` values.
 */
enum CrlmStatus crlm_volume_from_data(const uintptr_t *dims,
                                      const double *spacing,
                                      const double *data,
                                      uintptr_t len,
                                      struct CrlmVolume **out_volume);

/**
 * # Safety
 * `volume` must be a live handle; `out_dims` must point to 3 writable values.
 */
enum CrlmStatus crlm_volume_dims(const struct CrlmVolume *volume, uintptr_t *out_dims);

/**
 * # Safety
 * `volume` must be null or a handle not yet freed.
 */
void crlm_volume_free(struct CrlmVolume *volume);

/**
 * Propagates one positive click through the volume. `view` is 0 axial,
 * 1 coronal, 2 sagittal. `segmenter` may be null for the default. The
 * result is stored under `label`.
 *
 * # Safety
 * Handles and pointers must be valid; `segmenter` null or NUL-terminated.
 */
enum CrlmStatus crlm_samonai_segment(const struct CrlmVolume *volume,
                                     uint32_t view,
                                     uintptr_t index,
                                     uintptr_t row,
                                     uintptr_t col,
                                     const char *segmenter,
                                     uint8_t label,
                                     struct CrlmMask **out_mask);

/**
 * # Safety
 * `path` must be NUL-terminated; `out_mask` writable.
 */
enum CrlmStatus crlm_mask_load(const char *path, struct CrlmMask **out_mask);

/**
 * # Safety
 * `mask` must be a live handle; `path` NUL-terminated.
 */
enum CrlmStatus crlm_mask_save(const struct CrlmMask *mask, const char *path);

/**
 * Number of voxels carrying `label`.
 *
 * # Safety
 * `mask` must be a live handle; `out_count` writable.
 */
enum CrlmStatus crlm_mask_count(const struct CrlmMask *mask, uint8_t label, uintptr_t *out_count);

/**
 * Copies label codes (x fastest) into `buf`, which must hold every voxel.
 *
 * # Safety
 * `mask` must be a live handle; `buf` must point to `len` writable bytes.
 */
enum CrlmStatus crlm_mask_copy_labels(const struct CrlmMask *mask, uint8_t *buf, uintptr_t len);

/**
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void crlm_mask_free(struct CrlmMask *mask);

/**
 * Dice overlap of one label between two masks on the same grid.
 *
 * # Safety
 * Both handles must be live; `out_dice` writable.
 */
enum CrlmStatus crlm_dice(const struct CrlmMask *a,
                          const struct CrlmMask *b,
                          uint8_t label,
                          double *out_dice);

/**
 * Harrell's concordance index. `events` holds 0 (censored) or 1.
 *
 * # Safety
 * Each array must hold `n` values; `out_c` writable.
 */
enum CrlmStatus crlm_concordance_index(const double *times,
                                       const uint8_t *events,
                                       const double *risks,
                                       uintptr_t n,
                                       double *out_c);

/**
 * Runs the full batch pipeline described by a JSON config file.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
enum CrlmStatus crlm_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRLM_H */
