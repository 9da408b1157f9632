#ifndef TSTGAN_H
#define TSTGAN_H

/* Generated by cbindgen from tstgan-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes mirroring the CLI exit codes.
typedef enum TstganStatus {
  TSTGAN_STATUS_OK = 0,
  // Invalid arguments or configuration.
  TSTGAN_STATUS_USAGE = 1,
  // Missing or malformed data, I/O failures, bad checkpoints.
  TSTGAN_STATUS_DATA = 2,
  // Non-finite losses or failed numerical checks.
  TSTGAN_STATUS_NUMERICAL = 3,
  // A null pointer where one is not allowed.
  TSTGAN_STATUS_NULL_POINTER = 4,
  // Internal panic; a bug, not a user error.
  TSTGAN_STATUS_PANIC = 5,
} TstganStatus;

// Opaque trained-model handle.
typedef struct TstganModel TstganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread, or null if none. The pointer stays
// valid until the next failing call on the same thread.
const char *tstgan_last_error(void);

// Library version as a static NUL-terminated string.
const char *tstgan_version(void);

// Generate the sines dataset and write it in the window CSV format.
//
// # Safety
// `out_path` must be a valid NUL-terminated path string.
enum TstganStatus tstgan_sines_generate(uintptr_t samples,
                                        uintptr_t seq_len,
                                        uintptr_t features,
                                        uint64_t seed,
                                        const char *out_path);

// Train a model on a CSV dataset and write a checkpoint.
// `config_json` may be null for defaults; it accepts the same keys as the
// CLI `--config` file.
//
// # Safety
// String arguments must be valid NUL-terminated strings (or null where
// documented).
enum TstganStatus tstgan_train(const char *data_path,
                               const char *config_json,
                               const char *out_ckpt);

// Load a checkpoint into an opaque handle. On success `*out` owns the
// model and must be released with [`tstgan_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated path; `out` must be a valid
// pointer to a handle slot.
enum TstganStatus tstgan_model_load(const char *path, struct TstganModel **out);

// Release a model handle. Null is a no-op.
//
// # Safety
// `model` must be a pointer previously returned by
// [`tstgan_model_load`], not yet freed.
void tstgan_model_free(struct TstganModel *model);

// Data feature dimension of a loaded model, or 0 on null.
//
// # Safety
// `model` must be a live handle from [`tstgan_model_load`] or null.
uintptr_t tstgan_model_features(const struct TstganModel *model);

// Sequence length of a loaded model, or 0 on null.
//
// # Safety
// `model` must be a live handle from [`tstgan_model_load`] or null.
uintptr_t tstgan_model_seq_len(const struct TstganModel *model);

// Sample `n` synthetic windows and write them as a window CSV.
//
// # Safety
// `model` must be a live handle; `out_path` a valid NUL-terminated path.
enum TstganStatus tstgan_model_synthesize(const struct TstganModel *model,
                                          uintptr_t n,
                                          uint64_t seed,
                                          const char *out_path);

// Sample synthetic windows into a caller-provided buffer of
// `n * seq_len * features` floats, row-major `[n, seq_len, features]`.
//
// # Safety
// `model` must be a live handle; `buffer` must point to at least
// `buffer_len` writable floats.
enum TstganStatus tstgan_model_synthesize_into(const struct TstganModel *model,
                                               uintptr_t n,
                                               uint64_t seed,
                                               float *buffer,
                                               uintptr_t buffer_len);

// Predictive and discriminative scores of a synthetic window CSV against
// a real dataset CSV; the JSON report is written to `out_json`.
//
// # Safety
// All paths must be valid NUL-terminated strings.
enum TstganStatus tstgan_evaluate(const char *real_path,
                                  const char *synth_path,
                                  uintptr_t seq_len,
                                  uintptr_t runs,
                                  uint64_t seed,
                                  const char *out_json);

// Run the finite-difference gradient suite; returns `Ok` only if every
// primitive and composed path passes.
enum TstganStatus tstgan_gradcheck(uintptr_t probes, uint64_t seed);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TSTGAN_H */
