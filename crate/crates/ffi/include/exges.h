#ifndef EXGES_H
#define EXGES_H

#include <stddef.h>
#include <stdint.h>

typedef enum ExgesStatus {
  EXGES_STATUS_OK = 0,
  EXGES_STATUS_INVALID_ARGUMENT = 1,
  EXGES_STATUS_CONFIG = 2,
  EXGES_STATUS_MISSING_ARTIFACT = 3,
  EXGES_STATUS_NUMERICAL = 4,
  EXGES_STATUS_IO = 5,
  EXGES_STATUS_FORMAT = 6,
  EXGES_STATUS_NULL_POINTER = 7,
  EXGES_STATUS_PANIC = 8,
} ExgesStatus;

// Motion base with precomputed embeddings.
typedef struct ExgesBase ExgesBase;

// Trained retrieval encoders.
typedef struct ExgesRetrieval ExgesRetrieval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *exges_last_error(void);

// Library version as a static NUL-terminated string.
const char *exges_version(void);

// Loads an embedded motion base written by the `train-retrieval` stage.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum ExgesStatus exges_base_load(const char *path, struct ExgesBase **out);

// # Safety
// `base` must come from [`exges_base_load`] and not be used afterwards.
void exges_base_free(struct ExgesBase *base);

// # Safety
// `base` and `out_len` must be valid pointers.
enum ExgesStatus exges_base_len(const struct ExgesBase *base, size_t *out_len);

// Loads retrieval encoders. `config_path` is the run config TOML the model
// was trained with, or null for defaults.
//
// # Safety
// `model_path` must be a NUL-terminated string, `config_path` one or null,
// and `out` a valid pointer.
enum ExgesStatus exges_retrieval_load(const char *model_path,
                                      const char *config_path,
                                      struct ExgesRetrieval **out);

// # Safety
// `model` must come from [`exges_retrieval_load`] and not be used afterwards.
void exges_retrieval_free(struct ExgesRetrieval *model);

// Top-`k` base segments for a `frames × channels` audio window, best first.
// Writes `min(k, base size)` entries and their count.
//
// # Safety
// `audio` must hold `frames * channels` values; `out_ids` and `out_scores`
// must hold `k` entries.
enum ExgesStatus exges_retrieve_topk(const struct ExgesRetrieval *model,
                                     const struct ExgesBase *base,
                                     const double *audio,
                                     size_t frames,
                                     size_t channels,
                                     size_t k,
                                     uint64_t *out_ids,
                                     double *out_scores,
                                     size_t *out_count);

// Frame of base segment `segment_id` that best matches the audio window.
//
// # Safety
// `audio` must hold `frames * channels` values; outputs must be valid.
enum ExgesStatus exges_locate_keyframe(const struct ExgesRetrieval *model,
                                       const struct ExgesBase *base,
                                       const double *audio,
                                       size_t frames,
                                       size_t channels,
                                       uint64_t segment_id,
                                       size_t *out_index,
                                       double *out_score);

// MPJPE in millimeters between `frames × (3 · joints)` pose matrices.
//
// # Safety
// `pred` and `gt` must hold `frames * joints * 3` values.
enum ExgesStatus exges_mpjpe(const double *pred,
                             const double *gt,
                             size_t frames,
                             size_t joints,
                             double *out_mm);

// Per-frame Procrustes-aligned MPJPE in millimeters.
//
// # Safety
// `pred` and `gt` must hold `frames * joints * 3` values.
enum ExgesStatus exges_pa_mpjpe(const double *pred,
                                const double *gt,
                                size_t frames,
                                size_t joints,
                                double *out_mm);

// Fréchet distance between Gaussian fits of two `n × dim` feature sets.
//
// # Safety
// `generated` must hold `n_gen * dim` values and `reference` `n_ref * dim`.
enum ExgesStatus exges_fgd(const double *generated,
                           size_t n_gen,
                           const double *reference,
                           size_t n_ref,
                           size_t dim,
                           double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXGES_H */
