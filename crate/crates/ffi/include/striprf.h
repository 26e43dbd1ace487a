#ifndef STRIPRF_H
#define STRIPRF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SrfStatus {
  SRF_STATUS_OK = 0,
  SRF_STATUS_NULL_POINTER = 1,
  SRF_STATUS_INVALID_ARGUMENT = 2,
  SRF_STATUS_SHAPE = 3,
  SRF_STATUS_CONFIG = 4,
  SRF_STATUS_FORMAT = 5,
  SRF_STATUS_WEIGHT_MISMATCH = 6,
  SRF_STATUS_IO = 7,
  SRF_STATUS_PANIC = 8,
} SrfStatus;

typedef struct SrfDetections SrfDetections;

typedef struct SrfModel SrfModel;

typedef struct SrfOutputs SrfOutputs;

/**
 * One decoded box: top-left corner and size in pixels.
 */
typedef struct SrfDetection {
  uint64_t image_id;
  uint32_t class_id;
  float x;
  float y;
  float w;
  float h;
  float score;
} SrfDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `srf_` call on the same thread.
 */
const char *srf_last_error_message(void);

/**
 * Build a model from a JSON config and initialize its weights from the
 * config's seed.
 *
 * # Safety
 * `config_json` must be a nul-terminated string; `out` must be writable.
 */
enum SrfStatus srf_model_new(const char *config_json, struct SrfModel **out);

/**
 * # Safety
 * `model` must come from [`srf_model_new`] and not be used afterwards.
 */
void srf_model_free(struct SrfModel *model);

/**
 * Replace the model's weights with the contents of a weight file. Names and
 * shapes must match the model exactly; on failure the old weights stay.
 *
 * # Safety
 * `model` must be a live handle; `path` a nul-terminated string.
 */
enum SrfStatus srf_model_load_weights(struct SrfModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; `path` a nul-terminated string.
 */
enum SrfStatus srf_model_save_weights(const struct SrfModel *model, const char *path);

/**
 * Number of learnable scalars.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum SrfStatus srf_model_param_count(const struct SrfModel *model, size_t *out);

/**
 * Side length the model expects for its square inputs.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum SrfStatus srf_model_input_size(const struct SrfModel *model, size_t *out);

/**
 * Run the network on `batch` images stored as `batch × 3 × S × S` floats.
 *
 * # Safety
 * `data` must point to `len` readable floats; `out` must be writable.
 */
enum SrfStatus srf_model_forward(const struct SrfModel *model,
                                 const float *data,
                                 size_t len,
                                 size_t batch,
                                 struct SrfOutputs **out);

/**
 * # Safety
 * `outputs` must come from [`srf_model_forward`] and not be used afterwards.
 */
void srf_outputs_free(struct SrfOutputs *outputs);

/**
 * # Safety
 * `outputs` must be a live handle; `out` writable.
 */
enum SrfStatus srf_outputs_count(const struct SrfOutputs *outputs, size_t *out);

/**
 * Dims (N, C, H, W) and stride of head `index`.
 *
 * # Safety
 * `outputs` must be a live handle; `dims` must have room for 4 values.
 */
enum SrfStatus srf_outputs_head(const struct SrfOutputs *outputs,
                                size_t index,
                                size_t *dims,
                                size_t *stride);

/**
 * Borrow the values of head `index`; valid while `outputs` lives.
 *
 * # Safety
 * `outputs` must be a live handle; `data` and `len` writable.
 */
enum SrfStatus srf_outputs_data(const struct SrfOutputs *outputs,
                                size_t index,
                                const float **data,
                                size_t *len);

/**
 * Decode every head, keep boxes scoring at least `conf`, and suppress
 * same-class overlaps above `nms_iou`.
 *
 * # Safety
 * `outputs` must be a live handle; `out` writable.
 */
enum SrfStatus srf_outputs_detect(const struct SrfOutputs *outputs,
                                  double conf,
                                  double nms_iou,
                                  struct SrfDetections **out);

/**
 * # Safety
 * `dets` must come from [`srf_outputs_detect`] and not be used afterwards.
 */
void srf_detections_free(struct SrfDetections *dets);

/**
 * # Safety
 * `dets` must be a live handle; `out` writable.
 */
enum SrfStatus srf_detections_len(const struct SrfDetections *dets, size_t *out);

/**
 * # Safety
 * `dets` must be a live handle; `out` writable.
 */
enum SrfStatus srf_detections_get(const struct SrfDetections *dets,
                                  size_t index,
                                  struct SrfDetection *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRIPRF_H */
