#ifndef FACILITATOR_H
#define FACILITATOR_H

/* Generated by cbindgen. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CfPhase {
  CF_PHASE_COLLECTING_OPINIONS = 0,
  CF_PHASE_SYNTHESIZING = 1,
  CF_PHASE_AWAITING_VERDICTS = 2,
  CF_PHASE_COLLECTING_FEEDBACK = 3,
  CF_PHASE_SELECTING_STRATEGY = 4,
  CF_PHASE_CONSENSUS_REACHED = 5,
  CF_PHASE_ENDED_NO_CONSENSUS = 6,
} CfPhase;

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_INVALID_UTF8 = 3,
  CF_STATUS_PARSE = 4,
  CF_STATUS_EMBEDDING = 5,
  CF_STATUS_NOT_FOUND = 6,
  CF_STATUS_BUFFER_TOO_SMALL = 7,
  CF_STATUS_PANIC = 99,
} CfStatus;

typedef enum CfStrategy {
  CF_STRATEGY_CLARIFY_UNDERSTANDING = 0,
  CF_STRATEGY_HIGHLIGHT_COMMON_GROUND = 1,
  CF_STRATEGY_PROPOSE_COMPROMISE = 2,
  CF_STRATEGY_REFRAME_QUESTION = 3,
  CF_STRATEGY_SUMMARIZE_DISCUSSION = 4,
} CfStrategy;

/**
 * Local hashing encoder.
 */
typedef struct CfEmbedder CfEmbedder;

/**
 * A session rebuilt from a transcript.
 */
typedef struct CfSession CfSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *cf_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void cf_string_free(char *s);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` readable doubles; `out` must be writable.
 */
enum CfStatus cf_cosine_similarity(const double *a, const double *b, size_t len, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum CfStatus cf_embedder_new_local(size_t dimension, struct CfEmbedder **out);

/**
 * # Safety
 * `embedder` must be a live handle.
 */
size_t cf_embedder_dimension(const struct CfEmbedder *embedder);

/**
 * Writes the embedding of `text` into `buf`, which must hold
 * `cf_embedder_dimension(embedder)` doubles.
 *
 * # Safety
 * `embedder` must be a live handle, `text` a NUL-terminated string and
 * `buf` writable for `buf_len` doubles.
 */
enum CfStatus cf_embedder_embed(const struct CfEmbedder *embedder,
                                const char *text,
                                double *buf,
                                size_t buf_len);

/**
 * # Safety
 * `embedder` must be null or a handle from [`cf_embedder_new_local`].
 */
void cf_embedder_free(struct CfEmbedder *embedder);

/**
 * Parses a JSONL transcript and replays it.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_transcript_replay(const char *jsonl, struct CfSession **out);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum CfStatus cf_session_phase(const struct CfSession *session, enum CfPhase *out);

/**
 * Number of proposals issued so far.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum CfStatus cf_session_iterations(const struct CfSession *session, uint32_t *out);

/**
 * Returns `NotFound` when the session has not reached consensus.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum CfStatus cf_session_consensus_iteration(const struct CfSession *session, uint32_t *out);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable. The string
 * written to `out` must be released with [`cf_string_free`].
 */
enum CfStatus cf_session_to_json(const struct CfSession *session, char **out);

/**
 * # Safety
 * `session` must be null or a handle from [`cf_transcript_replay`].
 */
void cf_session_free(struct CfSession *session);

/**
 * Finds the elbow of a curve of mean similarities, where `means[i]` belongs
 * to iteration `i + 1`. Writes 0 to `out` when there is none.
 *
 * # Safety
 * `means` must point to `len` readable doubles; `out` must be writable.
 */
enum CfStatus cf_detect_elbow(const double *means, size_t len, double threshold, uint32_t *out);

/**
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_parse_strategy(const char *text, enum CfStrategy *out);

/**
 * Canonical name of a strategy as a static string.
 */
const char *cf_strategy_name(enum CfStrategy strategy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACILITATOR_H */
