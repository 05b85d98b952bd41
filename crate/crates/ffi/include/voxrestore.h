#ifndef VOXRESTORE_H
#define VOXRESTORE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum VxStatus {
  VX_STATUS_OK = 0,
  VX_STATUS_NULL_POINTER = 1,
  VX_STATUS_INVALID_ARGUMENT = 2,
  VX_STATUS_IO = 3,
  VX_STATUS_FORMAT = 4,
  VX_STATUS_SAMPLE_RATE = 5,
  VX_STATUS_LENGTH_MISMATCH = 6,
  VX_STATUS_WEIGHTS = 7,
  VX_STATUS_DISCONNECTED = 8,
  VX_STATUS_DEGENERATE = 9,
  VX_STATUS_PANIC = 10,
  VX_STATUS_OTHER = 11,
} VxStatus;

/**
 * Mono audio owned by the library.
 */
typedef struct VxAudio VxAudio;

/**
 * A loaded generator.
 */
typedef struct VxModel VxModel;

/**
 * Reconstruction losses of an estimate against a reference.
 */
typedef struct VxReconLosses {
  double wav;
  double spec;
  double omni;
  double recon;
} VxReconLosses;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * call into the library on the same thread.
 */
const char *vx_last_error(void);

/**
 * Static name of a status code (an integer so unknown codes are safe).
 */
const char *vx_status_name(int32_t status);

/**
 * Load a generator from a weight file and an optional config file (null
 * selects the full default configuration).
 *
 * # Safety
 * Path arguments are null or NUL-terminated; `out` is a valid pointer.
 */
enum VxStatus vx_model_load(const char *weights_path,
                            const char *config_path,
                            struct VxModel **out);

/**
 * Build a generator with seeded random weights, for testing and benchmarks.
 *
 * # Safety
 * As [`vx_model_load`].
 */
enum VxStatus vx_model_new_random(const char *config_path, uint64_t seed, struct VxModel **out);

/**
 * Sample rate the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` is null or a live handle.
 */
uint32_t vx_model_sample_rate(const struct VxModel *model);

/**
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void vx_model_free(struct VxModel *model);

/**
 * Restore `len` samples recorded at `sample_rate`.
 *
 * # Safety
 * `model` is a live handle, `samples` points to `len` floats, `out` is valid.
 */
enum VxStatus vx_model_restore(const struct VxModel *model,
                               const float *samples,
                               size_t len,
                               uint32_t sample_rate,
                               struct VxAudio **out);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `audio` is null or a live handle.
 */
size_t vx_audio_len(const struct VxAudio *audio);

/**
 * Sample rate, 0 for a null handle.
 *
 * # Safety
 * `audio` is null or a live handle.
 */
uint32_t vx_audio_sample_rate(const struct VxAudio *audio);

/**
 * Borrowed pointer to the samples, valid until the handle is freed.
 *
 * # Safety
 * `audio` is null or a live handle.
 */
const float *vx_audio_data(const struct VxAudio *audio);

/**
 * # Safety
 * `audio` is null or a handle not yet freed.
 */
void vx_audio_free(struct VxAudio *audio);

/**
 * Apply the degradation chain. `spec_text` holds a degradation spec in its
 * key-value text form (null selects the defaults); `seed` overrides its
 * seed. The applied-stage trace is returned as JSON lines in `out_trace`
 * when that pointer is non-null.
 *
 * # Safety
 * `samples` points to `len` floats; `spec_text` is null or NUL-terminated;
 * `out_audio` is valid; `out_trace` is null or valid.
 */
enum VxStatus vx_degrade(const float *samples,
                         size_t len,
                         uint32_t sample_rate,
                         const char *spec_text,
                         uint64_t seed,
                         struct VxAudio **out_audio,
                         char **out_trace);

/**
 * Reconstruction losses of `est` against `reference`; the phase terms use
 * the STFT grid of the default model configuration.
 *
 * # Safety
 * Sample pointers cover their lengths; `out` is valid.
 */
enum VxStatus vx_recon_losses(const float *reference,
                              size_t reference_len,
                              const float *est,
                              size_t est_len,
                              uint32_t sample_rate,
                              struct VxReconLosses *out);

/**
 * Fit Bradley–Terry strengths to comparison CSV text (header
 * `system_a,system_b,outcome,category`) and return the JSON report.
 *
 * # Safety
 * `csv_text` is NUL-terminated; `out_json` is valid.
 */
enum VxStatus vx_rank_csv(const char *csv_text, char **out_json);

/**
 * Release a string returned by the library.
 *
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void vx_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXRESTORE_H */
