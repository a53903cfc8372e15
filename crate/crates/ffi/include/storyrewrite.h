#ifndef STORYREWRITE_H
#define STORYREWRITE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_ARGUMENT = 1,
  SR_STATUS_INVALID_UTF8 = 2,
  SR_STATUS_CONFIG = 3,
  SR_STATUS_IO = 4,
  SR_STATUS_DATA = 5,
  SR_STATUS_MODEL = 6,
  SR_STATUS_INVALID = 7,
  SR_STATUS_PANIC = 8,
} SrStatus;

/**
 * Loaded vocabulary, tagger and generator. Opaque to C.
 */
typedef struct SrRewriter SrRewriter;

/**
 * Sampling settings for [`sr_rewriter_rewrite`].
 */
typedef struct SrSamplerOptions {
  size_t k;
  double temperature;
  uint64_t seed;
  size_t max_ending_length;
} SrSamplerOptions;

typedef struct SrRouge {
  double precision;
  double recall;
  double f_measure;
} SrRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *sr_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *sr_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sr_string_free(char *s);

/**
 * Default sampling settings.
 */
struct SrSamplerOptions sr_sampler_defaults(void);

/**
 * Loads a vocabulary and both checkpoints. On success `*out` holds a handle
 * to release with [`sr_rewriter_free`].
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum SrStatus sr_rewriter_load(const char *vocab_path,
                               const char *tagger_path,
                               const char *generator_path,
                               struct SrRewriter **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `rw` must come from [`sr_rewriter_load`] and not have been freed.
 */
void sr_rewriter_free(struct SrRewriter *rw);

/**
 * Predicted skeleton of `ending`, tokens joined by spaces with `[BLANK]` for
 * blanks.
 *
 * # Safety
 * `rw` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum SrStatus sr_rewriter_skeleton(const struct SrRewriter *rw,
                                   const char *premise,
                                   const char *condition,
                                   const char *ending,
                                   const char *counterfactual_condition,
                                   char **out);

/**
 * Rewrites `ending` for `counterfactual_condition`. `options` may be NULL
 * for [`sr_sampler_defaults`]. The same options give the same output.
 *
 * # Safety
 * `rw` must be a live handle; strings NUL-terminated; `options` NULL or
 * valid; `out` writable.
 */
enum SrStatus sr_rewriter_rewrite(const struct SrRewriter *rw,
                                  const char *premise,
                                  const char *condition,
                                  const char *ending,
                                  const char *counterfactual_condition,
                                  const struct SrSamplerOptions *options,
                                  char **out);

/**
 * Skeleton of `ending` that keeps the tokens shared with `edited` along
 * their longest common subsequence.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
enum SrStatus sr_lcs_skeleton(const char *ending, const char *edited, char **out);

/**
 * Token-level ROUGE-L of `candidate` against `reference`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
enum SrStatus sr_rouge_l(const char *candidate, const char *reference, struct SrRouge *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STORYREWRITE_H */
