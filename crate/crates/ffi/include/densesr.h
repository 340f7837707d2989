#ifndef DENSESR_H
#define DENSESR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsrArrangement {
  DSR_ARRANGEMENT_DIRECT = 0,
  DSR_ARRANGEMENT_INSERT = 1,
} DsrArrangement;

typedef enum DsrStatus {
  DSR_STATUS_OK = 0,
  DSR_STATUS_NULL_POINTER = 1,
  DSR_STATUS_INVALID_ARGUMENT = 2,
  DSR_STATUS_IO = 3,
  DSR_STATUS_BAD_CHECKPOINT = 4,
  DSR_STATUS_DECODE = 5,
  DSR_STATUS_NUMERIC = 6,
  DSR_STATUS_PANIC = 7,
} DsrStatus;

/**
 * Opaque model handle.
 */
typedef struct DsrModel DsrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dsr_last_error_message(void);

/**
 * Loads a checkpoint. On success `*out` owns a model to release with
 * [`dsr_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DsrStatus dsr_model_load(const char *path, struct DsrModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dsr_model_load`] and not be used afterwards.
 */
void dsr_model_free(struct DsrModel *model);

/**
 * Upscaling factor of the model, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t dsr_model_scale(const struct DsrModel *model);

/**
 * Number of trainable scalars, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint64_t dsr_model_param_count(const struct DsrModel *model);

/**
 * Super-resolves an interleaved RGB8 image of `width x height` into `out`,
 * which must hold `3 * width * height * scale²` bytes.
 *
 * # Safety
 * `rgb` must be readable for `3 * width * height` bytes and `out` writable
 * for `out_len` bytes.
 */
enum DsrStatus dsr_model_upscale(const struct DsrModel *model,
                                 const uint8_t *rgb,
                                 uint32_t width,
                                 uint32_t height,
                                 uint8_t *out,
                                 size_t out_len);

/**
 * PSNR in dB of two 8-bit buffers of equal length; `+inf` when identical.
 *
 * # Safety
 * `a` and `b` must be readable for `len` bytes; `out` must be writable.
 */
enum DsrStatus dsr_psnr_u8(const uint8_t *a, const uint8_t *b, size_t len, double *out);

/**
 * Mean SSIM (11x11 Gaussian window, range 255) of two interleaved 8-bit
 * images with `channels` channels. Both sides must be at least 11 pixels.
 *
 * # Safety
 * `a` and `b` must be readable for `width * height * channels` bytes; `out`
 * must be writable.
 */
enum DsrStatus dsr_ssim_u8(const uint8_t *a,
                           const uint8_t *b,
                           uint32_t width,
                           uint32_t height,
                           uint32_t channels,
                           double *out);

/**
 * Shuffle-pools a planar `channels x height x width` array by `factor` into
 * `out`, which must hold the same number of values. `arrangement` is a
 * [`DsrArrangement`] value.
 *
 * # Safety
 * `input` and `out` must be valid for `channels * height * width` values.
 */
enum DsrStatus dsr_shuffle_pool(const double *input,
                                uint32_t channels,
                                uint32_t height,
                                uint32_t width,
                                uint32_t factor,
                                uint32_t arrangement,
                                double *out,
                                size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSESR_H */
