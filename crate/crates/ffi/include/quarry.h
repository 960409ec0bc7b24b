#ifndef QUARRY_H
#define QUARRY_H

/* Generated by cbindgen from quarry-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum {
  QUARRY_STATUS_OK = 0,
  QUARRY_STATUS_NULL_POINTER = 1,
  QUARRY_STATUS_INVALID_UTF8 = 2,
  QUARRY_STATUS_INVALID_ARGUMENT = 3,
  QUARRY_STATUS_COMPUTE_FAILED = 4,
  QUARRY_STATUS_BUFFER_TOO_SMALL = 5,
} QuarryStatus;

/**
 * An opaque, growable collection of query strings.
 */
typedef struct QuarryCorpus QuarryCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an empty corpus. Free with [`quarry_corpus_free`].
 */
QuarryCorpus *quarry_corpus_new(void);

/**
 * Free a corpus handle. NULL is a no-op.
 *
 * # Safety
 * `corpus` must be a pointer returned by [`quarry_corpus_new`] that has not
 * been freed yet.
 */
void quarry_corpus_free(QuarryCorpus *corpus);

/**
 * Append one UTF-8 query string to the corpus.
 *
 * # Safety
 * `corpus` must be a live handle and `query` a NUL-terminated string valid
 * for the duration of the call; the string is copied.
 */
QuarryStatus quarry_corpus_add_query(QuarryCorpus *corpus, const char *query);

/**
 * Number of queries currently in the corpus; 0 for NULL.
 *
 * # Safety
 * `corpus` must be a live handle or NULL.
 */
size_t quarry_corpus_len(const QuarryCorpus *corpus);

/**
 * Distinct-n: unique n-grams over total n-gram occurrences, pooled across
 * queries without crossing query boundaries. `n` must be 1, 2, or 3.
 *
 * # Safety
 * `corpus` must be a live handle; `out` must point to writable memory.
 */
QuarryStatus quarry_corpus_distinct_n(const QuarryCorpus *corpus, uint32_t n, double *out);

/**
 * Bidirectional MTLD of the corpus token stream. Pass `ttr_threshold <= 0`
 * for the default of 0.72.
 *
 * # Safety
 * `corpus` must be a live handle; `out` must point to writable memory.
 */
QuarryStatus quarry_corpus_mtld(const QuarryCorpus *corpus, double ttr_threshold, double *out);

/**
 * One minus the mean pairwise cosine similarity under the deterministic
 * hash embedder. Pass `dimension = 0` for the default of 256. Needs at
 * least two queries.
 *
 * # Safety
 * `corpus` must be a live handle; `out` must point to writable memory.
 */
QuarryStatus quarry_corpus_cosine_diversity(const QuarryCorpus *corpus,
                                            size_t dimension,
                                            double *out);

/**
 * Signed percent change of `value` against `baseline`. Fails on a zero
 * baseline.
 *
 * # Safety
 * `out` must point to writable memory.
 */
QuarryStatus quarry_delta_percent(double value, double baseline, double *out);

/**
 * Render `method_tokens / reference_tokens` in the `x1.3` style into `buf`
 * (NUL-terminated). Fails with `BUFFER_TOO_SMALL` when `buf_len` cannot
 * hold the rendering.
 *
 * # Safety
 * `buf` must point to at least `buf_len` writable bytes.
 */
QuarryStatus quarry_format_cost_ratio(double method_tokens,
                                      double reference_tokens,
                                      char *buf,
                                      size_t buf_len);

/**
 * Take the last error message for this thread, or NULL when none is
 * pending. Free the result with [`quarry_string_free`].
 */
char *quarry_last_error_message(void);

/**
 * Free a string returned by [`quarry_last_error_message`].
 *
 * # Safety
 * `s` must be a pointer previously returned by this library's string-
 * returning functions, not yet freed.
 */
void quarry_string_free(char *s);

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *quarry_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUARRY_H */
