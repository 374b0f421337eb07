#ifndef TOPICMATCH_H
#define TOPICMATCH_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit conventions.
 */
typedef enum {
  TM_STATUS_TM_OK = 0,
  /**
   * Bad arguments: null pointers, invalid UTF-8, out-of-range values.
   */
  TM_STATUS_TM_USAGE = 1,
  /**
   * Missing or malformed files, config problems.
   */
  TM_STATUS_TM_DATA = 2,
  /**
   * Numeric failures: non-finite values, degenerate geometry.
   */
  TM_STATUS_TM_NUMERIC = 3,
} TmStatus;

/**
 * Opaque matcher handle.
 */
typedef struct TmMatcher TmMatcher;

/**
 * Matching options; zero/negative fields fall back to the model config.
 */
typedef struct {
  /**
   * Confidence threshold override; use a value in (0, 1) or 0 for default.
   */
  double tau;
  /**
   * Covisible topic count override; 0 for default.
   */
  uint32_t covisible;
  /**
   * Match cap; 0 keeps everything.
   */
  uint64_t topk;
} TmMatchOptions;

/**
 * One refined correspondence in image coordinates.
 */
typedef struct {
  double x1;
  double y1;
  double x2;
  double y2;
  double confidence;
  /**
   * 0-based topic id.
   */
  uint32_t topic;
  /**
   * Heatmap total variance of the refinement, in fine-grid pixels^2.
   */
  double sigma2;
} TmMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a matcher from a checkpoint file. `config_path` may be null to use
 * the checkpoint's embedded config.
 *
 * # Safety
 * `checkpoint_path` (and `config_path` when non-null) must be valid
 * NUL-terminated strings; `out` must be a valid pointer.
 */
TmStatus tm_matcher_load(const char *checkpoint_path, const char *config_path, TmMatcher **out);

/**
 * Release a matcher handle. Null is a no-op.
 *
 * # Safety
 * `matcher` must have come from `tm_matcher_load` and not be freed twice.
 */
void tm_matcher_free(TmMatcher *matcher);

/**
 * Number of topics of the loaded model, or 0 on a null handle.
 *
 * # Safety
 * `matcher` must be a live handle from `tm_matcher_load`.
 */
uint32_t tm_matcher_topics(const TmMatcher *matcher);

/**
 * Switch every attention stage to the given kernel: 0 dot, 1 linear.
 *
 * # Safety
 * `matcher` must be a live handle from `tm_matcher_load`.
 */
TmStatus tm_matcher_set_kernel(TmMatcher *matcher, uint32_t kernel);

/**
 * Match two image files (PGM or PNG). On success `*out_matches` points to a
 * caller-owned array of `*out_len` records sorted by descending confidence;
 * free it with `tm_matches_free`.
 *
 * # Safety
 * All pointer arguments must be valid; the paths must be NUL-terminated.
 */
TmStatus tm_match_files(const TmMatcher *matcher,
                        const char *image_a,
                        const char *image_b,
                        const TmMatchOptions *options,
                        TmMatch **out_matches,
                        uintptr_t *out_len);

/**
 * Release a match array from `tm_match_files`. Null is a no-op.
 *
 * # Safety
 * `matches`/`len` must be exactly the pair produced by `tm_match_files`.
 */
void tm_matches_free(TmMatch *matches, uintptr_t len);

/**
 * Library version as a static string.
 */
const char *tm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPICMATCH_H */
