/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MASKFILL_H
#define MASKFILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  // A required pointer argument was null.
  MF_STATUS_NULL_ARGUMENT = 1,
  // Invalid configuration or argument value.
  MF_STATUS_CONFIG = 2,
  // An operation's precondition did not hold.
  MF_STATUS_CONTRACT = 3,
  // Mismatched image or tensor shapes.
  MF_STATUS_SHAPE = 4,
  // Reading or writing a file failed.
  MF_STATUS_IO = 5,
  // A file was not a valid image or weight file.
  MF_STATUS_FORMAT = 6,
  // Optimization produced a non-finite value.
  MF_STATUS_NUMERIC = 7,
  // A string argument was not valid UTF-8.
  MF_STATUS_UTF8 = 8,
  // An internal error; the library caught a panic.
  MF_STATUS_INTERNAL = 9,
} MfStatus;

// An image: `channels × height × width` floats.
typedef struct MfImage MfImage;

// An hourglass network with its weights.
typedef struct MfModel MfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. Valid until the next call on the same thread.
const char *mf_last_error(void);

// New image copied from `data` (`channels·height·width` floats), or filled
// with zeros when `data` is null.
//
// # Safety
// `data`, if not null, must point to that many readable floats; `out`
// must be writable.
enum MfStatus mf_image_new(size_t channels,
                           size_t height,
                           size_t width,
                           const float *data,
                           struct MfImage **out);

// Loads a PNG or PNM file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MfStatus mf_image_load(const char *path, struct MfImage **out);

// Saves with 8 bits per sample; the format follows the file extension.
//
// # Safety
// `image` must be a live handle and `path` a NUL-terminated string.
enum MfStatus mf_image_save(const struct MfImage *image, const char *path);

// Writes the dimensions; any of the out pointers may be null.
//
// # Safety
// `image` must be a live handle; non-null out pointers must be writable.
enum MfStatus mf_image_dims(const struct MfImage *image,
                            size_t *channels,
                            size_t *height,
                            size_t *width);

// Borrowed pointer to the image's samples, valid until the image is freed
// or modified. Null if `image` is null.
//
// # Safety
// `image` must be null or a live handle.
const float *mf_image_data(const struct MfImage *image);

// # Safety
// `image` must be null or a handle not yet freed.
void mf_image_free(struct MfImage *image);

// Fresh network with the default architecture for `channels`-channel
// images, initialized from `seed`.
//
// # Safety
// `out` must be writable.
enum MfStatus mf_model_new(size_t channels, uint64_t seed, struct MfModel **out);

// Loads a weight file written by `mf_model_save` or the CLI.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MfStatus mf_model_load(const char *path, struct MfModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum MfStatus mf_model_save(const struct MfModel *model, const char *path);

// # Safety
// `model` must be null or a handle not yet freed.
void mf_model_free(struct MfModel *model);

// Noisy copy of `clean`. `kind` is one of `gaussian`, `poisson`, `nlf`,
// `speckle`, `salt_pepper`; `param` is its strength on the `[0, 1]` scale.
//
// # Safety
// `clean` must be a live handle, `kind` a NUL-terminated string and `out`
// writable.
enum MfStatus mf_add_noise(const struct MfImage *clean,
                           const char *kind,
                           double param,
                           uint64_t seed,
                           struct MfImage **out);

// Denoises `noisy` by iterative filling, training `model` in place.
//
// `preset` names a preset (`synthetic-default`, `synthetic-faster`,
// `real-default`, `real-sidd`) and may be null for `synthetic-default`.
// `overrides_toml` may hold `key = value` lines for any denoising option
// (for example `iterations = 300`) and may be null.
//
// # Safety
// `model` and `noisy` must be live handles; string arguments must be null
// or NUL-terminated; `out` must be writable.
enum MfStatus mf_denoise(struct MfModel *model,
                         const struct MfImage *noisy,
                         const char *preset,
                         const char *overrides_toml,
                         struct MfImage **out);

// Averages the model's predictions over `masks` random masks with ratio
// `mask_ratio`, without training.
//
// # Safety
// `model` and `noisy` must be live handles; `out` must be writable.
enum MfStatus mf_direct_ensemble(const struct MfModel *model,
                                 const struct MfImage *noisy,
                                 size_t masks,
                                 double mask_ratio,
                                 uint64_t seed,
                                 struct MfImage **out);

// PSNR in dB with peak 1.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum MfStatus mf_psnr(const struct MfImage *a, const struct MfImage *b, double *out);

// Mean SSIM over channels (11×11 Gaussian window, σ = 1.5).
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum MfStatus mf_ssim(const struct MfImage *a, const struct MfImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASKFILL_H */
