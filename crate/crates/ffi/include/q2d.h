#ifndef Q2D_H
#define Q2D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Bits of [`Q2dVerdict::failed_mask`].
 */
#define Q2D_FAIL_INTENT 1

#define Q2D_FAIL_ANSWER_LEAK (1 << 1)

#define Q2D_FAIL_LAST_TURN (1 << 2)

#define Q2D_FAIL_NLI (1 << 3)

/*
 Values of [`Q2dFilterConfig::leak_scope`].
 */
#define Q2D_LEAK_ALL_TURNS 0

#define Q2D_LEAK_ASSISTANT_TURNS 1

typedef enum Q2dStatus {
  Q2D_STATUS_OK = 0,
  Q2D_STATUS_NULL_POINTER = 1,
  Q2D_STATUS_INVALID_UTF8 = 2,
  Q2D_STATUS_INVALID_ARGUMENT = 3,
  Q2D_STATUS_IO = 4,
  Q2D_STATUS_PARSE = 5,
  Q2D_STATUS_PANIC = 6,
} Q2dStatus;

/*
 Opaque embedder handle.
 */
typedef struct Q2dEmbedder Q2dEmbedder;

/*
 Opaque prompt-set handle.
 */
typedef struct Q2dPromptSet Q2dPromptSet;

typedef struct Q2dFilterConfig {
  double t_query;
  double t_answer;
  double t_last_turn;
  bool nli_enabled;
  double t_nli;
  /*
   `Q2D_LEAK_ALL_TURNS` or `Q2D_LEAK_ASSISTANT_TURNS`.
   */
  uint32_t leak_scope;
} Q2dFilterConfig;

/*
 Precomputed filter scores. `nli_intent` is NaN when absent.
 */
typedef struct Q2dFilterScores {
  double intent_similarity;
  double answer_leak;
  double last_turn_similarity;
  double nli_intent;
} Q2dFilterScores;

typedef struct Q2dVerdict {
  bool retained;
  uint32_t failed_mask;
} Q2dVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread ("" after a success).
 */
const char *q2d_last_error(void);

/*
 Library version, a static string.
 */
const char *q2d_version(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be NULL or a pointer obtained from this library, freed once.
 */
void q2d_string_free(char *s);

/*
 Rouge-1 recall of `candidate` against `reference`.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum Q2dStatus q2d_rouge1_recall(const char *reference, const char *candidate, double *out);

/*
 Fraction of `needle` tokens found in `haystack` (the answer-leak score).

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum Q2dStatus q2d_contains_overlap(const char *haystack, const char *needle, double *out);

/*
 The dependency-free hashed bag-of-words embedder.
 */
struct Q2dEmbedder *q2d_embedder_builtin_new(void);

/*
 # Safety
 `h` must be NULL or a live handle from [`q2d_embedder_builtin_new`].
 */
void q2d_embedder_free(struct Q2dEmbedder *h);

/*
 Cosine similarity of the embeddings of `a` and `b`.

 # Safety
 `h` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum Q2dStatus q2d_embedder_similarity(const struct Q2dEmbedder *h,
                                       const char *a,
                                       const char *b,
                                       double *out);

/*
 Parses a prompt set from JSON text into `*out`.

 # Safety
 `json` must be NUL-terminated; `out` writable.
 */
enum Q2dStatus q2d_prompt_set_from_json(const char *json, struct Q2dPromptSet **out);

/*
 Loads a prompt set from a JSON file into `*out`.

 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum Q2dStatus q2d_prompt_set_load(const char *path, struct Q2dPromptSet **out);

/*
 # Safety
 `h` must be NULL or a live prompt-set handle.
 */
void q2d_prompt_set_free(struct Q2dPromptSet *h);

/*
 Renders the question → dialog prompt. Free `*out` with [`q2d_string_free`].

 # Safety
 `h` must be a live handle; `question` NUL-terminated; `out` writable.
 */
enum Q2dStatus q2d_prompt_set_render_forward(const struct Q2dPromptSet *h,
                                             const char *question,
                                             char **out);

/*
 Renders the dialog → question prompt. `dialog_json` is a JSON array of
 `{"role": "user"|"assistant", "text": ...}` turns.

 # Safety
 `h` must be a live handle; `dialog_json` NUL-terminated; `out` writable.
 */
enum Q2dStatus q2d_prompt_set_render_reverse(const struct Q2dPromptSet *h,
                                             const char *dialog_json,
                                             char **out);

/*
 Writes the default filter thresholds into `*out`.

 # Safety
 `out` must be writable.
 */
enum Q2dStatus q2d_filter_config_default(struct Q2dFilterConfig *out);

/*
 Applies the filter cascade to precomputed scores.

 # Safety
 `cfg` and `scores` must be readable, `out` writable.
 */
enum Q2dStatus q2d_filter_apply(const struct Q2dFilterConfig *cfg,
                                const struct Q2dFilterScores *scores,
                                struct Q2dVerdict *out);

/*
 Recall@10 of the predicted result URLs against the gold ones, after URL
 normalization and de-duplication (first ten kept). Writes NaN when the
 gold list is empty.

 # Safety
 `gold` / `pred` must point to `n_gold` / `n_pred` NUL-terminated strings
 (either may be NULL when its count is 0); `out` writable.
 */
enum Q2dStatus q2d_recall_at_10(const char *const *gold,
                                size_t n_gold,
                                const char *const *pred,
                                size_t n_pred,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* Q2D_H */
