#ifndef MSABN_H
#define MSABN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsabnStatus {
  MSABN_STATUS_OK = 0,
  MSABN_STATUS_NULL_POINTER = 1,
  MSABN_STATUS_INVALID_ARGUMENT = 2,
  MSABN_STATUS_IO = 3,
  MSABN_STATUS_SHAPE = 4,
  MSABN_STATUS_NUMERIC = 5,
  MSABN_STATUS_INTERNAL = 6,
  MSABN_STATUS_PANIC = 7,
} MsabnStatus;

/**
 * Opaque model handle.
 */
typedef struct MsabnModel MsabnModel;

/**
 * Box corners in pixels, `[x_min, x_max) x [y_min, y_max)`.
 */
typedef struct MsabnBox {
  uint32_t x_min;
  uint32_t y_min;
  uint32_t x_max;
  uint32_t y_max;
} MsabnBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *msabn_last_error(void);

/**
 * Loads a checkpoint (`.safetensors`, `.json` sidecar, or their common stem).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsabnStatus msabn_model_load(const char *path, struct MsabnModel **out);

/**
 * Builds a freshly initialised model from a JSON model config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsabnStatus msabn_model_new(const char *config_json, uint64_t seed, struct MsabnModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void msabn_model_free(struct MsabnModel *model);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t msabn_model_num_classes(const struct MsabnModel *model);

/**
 * Side of the square network input, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t msabn_model_input_size(const struct MsabnModel *model);

/**
 * Side of the square attention map, or 0 when the model has no attention
 * branch or the handle is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t msabn_model_attention_side(const struct MsabnModel *model);

/**
 * Runs one image through the model in inference mode. The image must
 * already be `input_size x input_size`. Writes `num_classes` logits, and
 * when `attention_out` is not null, `attention_side^2` attention values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum MsabnStatus msabn_model_predict(const struct MsabnModel *model,
                                     const uint8_t *pixels,
                                     size_t width,
                                     size_t height,
                                     size_t channels,
                                     float *logits_out,
                                     size_t logits_len,
                                     float *attention_out,
                                     size_t attention_len);

/**
 * Fraction of attention pixels at or above `threshold` that fall outside
 * `bbox`, with the box given in the map's own coordinates.
 *
 * # Safety
 * `attention` must hold `height * width` values and `out` be valid.
 */
enum MsabnStatus msabn_frac_attention_outside(const float *attention,
                                              size_t height,
                                              size_t width,
                                              struct MsabnBox bbox,
                                              float threshold,
                                              double *out);

/**
 * Pastes the `source_box` patch of `source`, resized, into `target_box` of
 * `target`; the result (target-sized) goes to `out`.
 *
 * # Safety
 * Buffers must hold `w * h * channels` bytes for their images.
 */
enum MsabnStatus msabn_copy_replace(const uint8_t *source,
                                    size_t source_width,
                                    size_t source_height,
                                    struct MsabnBox source_box,
                                    const uint8_t *target,
                                    size_t target_width,
                                    size_t target_height,
                                    struct MsabnBox target_box,
                                    size_t channels,
                                    uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSABN_H */
