#ifndef REFLECTNET_H
#define REFLECTNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum RfnStatus {
  RFN_STATUS_OK = 0,
  RFN_STATUS_NULL_POINTER = 1,
  RFN_STATUS_INVALID_ARGUMENT = 2,
  RFN_STATUS_SHAPE = 3,
  RFN_STATUS_CONFIG = 4,
  RFN_STATUS_IO = 5,
  RFN_STATUS_FORMAT = 6,
  RFN_STATUS_NUMERIC = 7,
  RFN_STATUS_PANIC = 8,
} RfnStatus;

/**
 * Opaque model handle.
 */
typedef struct RfnModel RfnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The pointer stays
 * valid until the next call on the same thread.
 */
const char *rfn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rfn_version(void);

/**
 * Freshly initialized model from a JSON model config, e.g.
 * `{"family":"vgg","n_classes":10,"width_multiplier":0.25}`; add
 * `"explanation_attach":[{"layer":2,"depth":16}]` for a reflective model.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfnStatus rfn_model_new(const char *config_json, uint64_t seed, struct RfnModel **out);

/**
 * Model described by `config_json` with weights read from a checkpoint file.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` a valid pointer.
 */
enum RfnStatus rfn_model_load(const char *config_json,
                              const char *checkpoint_path,
                              struct RfnModel **out);

/**
 * Writes the model's weights and running statistics to a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum RfnStatus rfn_model_save(const struct RfnModel *model, const char *path);

/**
 * Reflective model that starts as the same function as `base`: base weights copied,
 * one branch of depth `depth` per entry of `layers`, branch read-in weights zeroed.
 *
 * # Safety
 * `base` must be a live handle, `layers` must hold `n_layers` values and `out` must be
 * a valid pointer.
 */
enum RfnStatus rfn_model_reflective_from(const struct RfnModel *base,
                                         const uint32_t *layers,
                                         size_t n_layers,
                                         uint32_t depth,
                                         uint64_t seed,
                                         struct RfnModel **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from this library and must not be used afterwards.
 */
void rfn_model_free(struct RfnModel *model);

/**
 * Number of classes.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RfnStatus rfn_model_n_classes(const struct RfnModel *model, uint32_t *out);

/**
 * Number of explanation inputs (0 for a base model).
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RfnStatus rfn_model_n_branches(const struct RfnModel *model, uint32_t *out);

/**
 * `[d,u,v]` of the explanation consumed by branch `branch` for `h x w` inputs.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to 3 writable values.
 */
enum RfnStatus rfn_model_explanation_shape(const struct RfnModel *model,
                                           uint32_t branch,
                                           uint32_t height,
                                           uint32_t width,
                                           uint32_t *out);

/**
 * `[K,u,v]` of the feature maps at `layer` for `h x w` inputs.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to 3 writable values.
 */
enum RfnStatus rfn_model_layer_shape(const struct RfnModel *model,
                                     uint32_t layer,
                                     uint32_t height,
                                     uint32_t width,
                                     uint32_t *out);

/**
 * Evaluation-mode logits `[n, n_classes]` for `n` images of shape `[c,h,w]`.
 * `explanations` holds every branch's `[n,d,u,v]` block back to back (length 0 and a
 * null pointer for a base model).
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum RfnStatus rfn_forward(const struct RfnModel *model,
                           const float *input,
                           uint32_t n,
                           uint32_t c,
                           uint32_t h,
                           uint32_t w,
                           const float *explanations,
                           size_t explanations_len,
                           float *logits_out,
                           size_t logits_len);

/**
 * Normalized depth-`depth` explanations `[n,depth,u,v]` of `classes[i]` for each image
 * at `layer` of a base model.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths; `classes` holds `n` values.
 */
enum RfnStatus rfn_explain(const struct RfnModel *model,
                           const float *input,
                           uint32_t n,
                           uint32_t c,
                           uint32_t h,
                           uint32_t w,
                           const uint32_t *classes,
                           uint32_t layer,
                           uint32_t depth,
                           float *out,
                           size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REFLECTNET_H */
