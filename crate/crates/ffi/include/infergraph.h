#ifndef INFERGRAPH_H
#define INFERGRAPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum IgStatus {
  IG_STATUS_OK = 0,
  IG_STATUS_NULL_POINTER = 1,
  IG_STATUS_INVALID_UTF8 = 2,
  IG_STATUS_PARSE_ERROR = 3,
  IG_STATUS_FEEDBACK_ERROR = 4,
  IG_STATUS_IO_ERROR = 5,
  IG_STATUS_MODEL_ERROR = 6,
  IG_STATUS_INVALID_ARGUMENT = 7,
  IG_STATUS_PANIC = 8,
} IgStatus;

/**
 * Opaque inference graph.
 */
typedef struct IgGraph IgGraph;

/**
 * Opaque trained encoder.
 */
typedef struct IgModel IgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next `ig_*` call on the same thread.
 */
const char *ig_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void ig_string_free(char *s);

/**
 * Parses a linearized graph (`[C+] text [C-] text ...`).
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum IgStatus ig_graph_parse(const char *text, struct IgGraph **out);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `g` must come from [`ig_graph_parse`] and not have been freed already.
 */
void ig_graph_free(struct IgGraph *g);

/**
 * Canonical linearization of `g`.
 *
 * # Safety
 * `g` must be a live graph handle and `out` a valid pointer.
 */
enum IgStatus ig_graph_serialize(const struct IgGraph *g, char **out);

/**
 * Repetition feedback for `g` at the given Jaccard threshold. Writes the
 * feedback sentence to `out_message` and the number of overlap groups to
 * `out_groups` (0 when the graph is clean).
 *
 * # Safety
 * `g` must be a live graph handle; the out-pointers must be valid.
 */
enum IgStatus ig_graph_feedback(const struct IgGraph *g,
                                double threshold,
                                char **out_message,
                                size_t *out_groups);

/**
 * Loads a checkpoint written by `infergraph train`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum IgStatus ig_model_load(const char *path, struct IgModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `m` must come from [`ig_model_load`] and not have been freed already.
 */
void ig_model_free(struct IgModel *m);

/**
 * Encoder kind of `m` (`moe`, `gcn`, `str` or `baseline`).
 *
 * # Safety
 * `m` must be a live model handle and `out` a valid pointer.
 */
enum IgStatus ig_model_kind(const struct IgModel *m, char **out);

/**
 * Classifies one query. `out_logits` receives two values (strengthens,
 * weakens); `out_class` receives 0 for strengthens and 1 for weakens.
 *
 * # Safety
 * `m` and `g` must be live handles, the strings nul-terminated, and
 * `out_logits` must point to at least two doubles.
 */
enum IgStatus ig_model_predict(const struct IgModel *m,
                               const char *premise,
                               const char *hypothesis,
                               const char *update,
                               const struct IgGraph *g,
                               double *out_logits,
                               uint32_t *out_class);

/**
 * Exact two-sided McNemar p-value for discordant counts `n01`, `n10`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IgStatus ig_mcnemar_exact(uint64_t n01, uint64_t n10, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFERGRAPH_H */
