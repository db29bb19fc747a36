#ifndef RELIGHTKIT_H
#define RELIGHTKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum RlkStatus {
  RLK_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  RLK_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument or shape.
   */
  RLK_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed input data.
   */
  RLK_STATUS_DATA_ERROR = 3,
  /**
   * Non-finite values during computation.
   */
  RLK_STATUS_NUMERIC_ERROR = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  RLK_STATUS_PANIC = 5,
} RlkStatus;

/**
 * Rendered synthetic capture.
 */
typedef struct RlkCapture RlkCapture;

/**
 * Trained denoiser with its noise schedule.
 */
typedef struct RlkModel RlkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success. The pointer stays
 * valid until the next call on the same thread.
 */
const char *rlk_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rlk_version(void);

/**
 * Load a checkpoint (adapters are merged). Free with [`rlk_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RlkStatus rlk_model_load(const char *path, struct RlkModel **out);

/**
 * Freshly initialized (untrained) default model, mainly for smoke tests.
 *
 * # Safety
 * `out` must be writable.
 */
enum RlkStatus rlk_model_init(uint64_t seed, struct RlkModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards; null is ignored.
 */
void rlk_model_free(struct RlkModel *model);

/**
 * Relight one frame. `flat` and `env` are 3-channel planar images of `width × height`
 * (`env` already tone-mapped into the camera frame); `out` receives the same shape.
 * Both sides must be multiples of 4.
 *
 * # Safety
 * Buffers must hold `3 · width · height` floats; `model` must be live.
 */
enum RlkStatus rlk_model_relight(const struct RlkModel *model,
                                 const float *flat,
                                 const float *env,
                                 size_t width,
                                 size_t height,
                                 size_t ddim_steps,
                                 uint64_t seed,
                                 float *out);

/**
 * Render a synthetic capture session. Free with [`rlk_capture_free`].
 *
 * # Safety
 * `out` must be writable.
 */
enum RlkStatus rlk_capture_synth(uint64_t subject_id,
                                 uint8_t complexity,
                                 size_t pairs,
                                 size_t cameras,
                                 size_t image_size,
                                 struct RlkCapture **out);

/**
 * # Safety
 * `capture` must come from this library and not be used afterwards; null is ignored.
 */
void rlk_capture_free(struct RlkCapture *capture);

/**
 * Number of (frame, camera) pairs and the square image side.
 *
 * # Safety
 * `capture` must be live; outputs must be writable.
 */
enum RlkStatus rlk_capture_info(const struct RlkCapture *capture,
                                size_t *n_pairs,
                                size_t *image_size);

/**
 * Copy pair `index`'s flat frame, relit frame and camera-frame env conditioning into
 * three caller buffers of `3 · size · size` floats each. Any output may be null to skip it.
 *
 * # Safety
 * `capture` must be live; non-null outputs must be large enough.
 */
enum RlkStatus rlk_capture_pair(const struct RlkCapture *capture,
                                size_t index,
                                float *flat,
                                float *relit,
                                float *env);

/**
 * Write the capture (frames, masks, lights, manifest) below `dir`.
 *
 * # Safety
 * `capture` must be live; `dir` NUL-terminated.
 */
enum RlkStatus rlk_capture_write(const struct RlkCapture *capture, const char *dir);

/**
 * PSNR in dB (capped at 99) between two planar images of identical shape.
 *
 * # Safety
 * Both buffers must hold `channels · width · height` floats; `out` must be writable.
 */
enum RlkStatus rlk_psnr(const float *a,
                        const float *b,
                        size_t channels,
                        size_t width,
                        size_t height,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELIGHTKIT_H */
