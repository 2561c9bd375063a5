#ifndef IMPRINT_LAB_H
#define IMPRINT_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ImlStatus {
  IML_STATUS_OK = 0,
  IML_STATUS_NULL_POINTER = 1,
  IML_STATUS_INVALID_ARGUMENT = 2,
  IML_STATUS_IO = 3,
  IML_STATUS_FORMAT = 4,
  IML_STATUS_SHAPE = 5,
  IML_STATUS_PRECONDITION = 6,
  IML_STATUS_CAPABILITY = 7,
  IML_STATUS_INTERNAL = 8,
  IML_STATUS_PANIC = 9,
} ImlStatus;

/**
 * A trained detector.
 */
typedef struct ImlDetector ImlDetector;

/**
 * A per-element Laplace imprint field.
 */
typedef struct ImlField ImlField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *iml_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *iml_last_error_message(void);

/**
 * Probability at or above which an image is called fake.
 */
double iml_decision_threshold(void);

/**
 * Load a detector checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ImlStatus iml_detector_load(const char *path, struct ImlDetector **out);

/**
 * Release a detector. Null is ignored.
 *
 * # Safety
 * `det` must come from [`iml_detector_load`] and not be freed twice.
 */
void iml_detector_free(struct ImlDetector *det);

/**
 * Input side length in pixels, or 0 for a null handle.
 *
 * # Safety
 * `det` must be null or a live handle.
 */
size_t iml_detector_resolution(const struct ImlDetector *det);

/**
 * Fake probabilities of `n_images` RGB images of `size x size` pixels.
 * `pixels` holds `n_images * 3 * size * size` floats in `[0, 1]`, each image
 * channel-planar (all red, then green, then blue, row-major). Writes
 * `n_images` probabilities to `out_probs`.
 *
 * # Safety
 * `det` must be a live handle; `pixels` and `out_probs` must point to
 * arrays of the stated lengths.
 */
enum ImlStatus iml_detector_predict(const struct ImlDetector *det,
                                    const float *pixels,
                                    size_t n_images,
                                    size_t size,
                                    double *out_probs);

/**
 * Load a Laplace field into `*out`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ImlStatus iml_field_load(const char *path, struct ImlField **out);

/**
 * Release a field. Null is ignored.
 *
 * # Safety
 * `field` must come from [`iml_field_load`] and not be freed twice.
 */
void iml_field_free(struct ImlField *field);

/**
 * Write the field's `[channels, height, width]` to `out_shape`.
 *
 * # Safety
 * `field` must be a live handle and `out_shape` point to 3 writable values.
 */
enum ImlStatus iml_field_shape(const struct ImlField *field, size_t *out_shape);

/**
 * Draw `n_draws` imprints from the field with a seeded generator. `out`
 * receives `n_draws * C * H * W` values, draw-major; `len` is its capacity.
 *
 * # Safety
 * `field` must be a live handle and `out` point to `len` writable doubles.
 */
enum ImlStatus iml_field_sample(const struct ImlField *field,
                                uint64_t seed,
                                size_t n_draws,
                                double *out,
                                size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPRINT_LAB_H */
