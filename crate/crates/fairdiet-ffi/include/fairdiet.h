#ifndef FAIRDIET_H
#define FAIRDIET_H

/* Generated by cbindgen from fairdiet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by fallible functions.
 */
typedef enum FdStatus {
  FdOk = 0,
  FdNullPointer = 1,
  FdInvalidUtf8 = 2,
  FdParseError = 3,
  FdInvalidInput = 4,
  FdUndefinedMetric = 5,
  FdIoError = 6,
  FdPanic = 7,
} FdStatus;

/**
 * Opaque lexicon handle.
 */
typedef struct FdLexicon FdLexicon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failing call on this thread, or null.
 * Valid until the next failing call on the same thread.
 */
const char *fd_last_error_message(void);

/**
 * Library version as a static string; do not free.
 */
const char *fd_version(void);

/**
 * The built-in lexicon. Never fails; free with `fd_lexicon_free`.
 */
struct FdLexicon *fd_lexicon_default(void);

/**
 * Load a lexicon file (UTF-8 path). On success stores a handle in `out`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer.
 */
enum FdStatus fd_lexicon_load(const char *path, struct FdLexicon **out);

/**
 * Release a lexicon handle. Null is ignored.
 *
 * # Safety
 * `lexicon` must have been produced by this library and not freed before.
 */
void fd_lexicon_free(struct FdLexicon *lexicon);

/**
 * Flip every gender word in `text`; stores a newly allocated string in
 * `out` (free with `fd_string_free`).
 *
 * # Safety
 * `lexicon` must be a live handle; `text` a valid NUL-terminated string;
 * `out` a valid pointer.
 */
enum FdStatus fd_flip_gender(const struct FdLexicon *lexicon, const char *text, char **out);

/**
 * True iff at least one token of `text` matches the lexicon.
 *
 * # Safety
 * Same contracts as `fd_flip_gender`.
 */
enum FdStatus fd_contains_gender_words(const struct FdLexicon *lexicon,
                                       const char *text,
                                       bool *out);

/**
 * Release a string allocated by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void fd_string_free(char *s);

/**
 * DP = 1 - |P(pred=1 | z=1) - P(pred=1 | z=0)| over two equal-length
 * 0/1 prediction arrays.
 *
 * # Safety
 * `pred_z1` and `pred_z0` must point to `len` readable bytes; `out` must
 * be a valid pointer.
 */
enum FdStatus fd_demographic_parity(const uint8_t *pred_z1,
                                    const uint8_t *pred_z0,
                                    uintptr_t len,
                                    double *out);

/**
 * Equality of opportunity conditioned on y = `conditioned_label` (0 or 1).
 *
 * # Safety
 * All arrays must point to `len` readable bytes; `out` must be valid.
 */
enum FdStatus fd_eq_opp(const uint8_t *pred_z1,
                        const uint8_t *pred_z0,
                        const uint8_t *labels,
                        uintptr_t len,
                        uint8_t conditioned_label,
                        double *out);

/**
 * EqOdd = 0.5 * (EqOpp1 + EqOpp0); pure arithmetic, never fails.
 */
double fd_eq_odd(double eq_opp1, double eq_opp0);

/**
 * AUC in the Mann-Whitney form (ties count one half) over scores and 0/1
 * labels. Fails with `FdUndefinedMetric` unless both classes are present.
 *
 * # Safety
 * `scores` must point to `len` readable doubles, `labels` to `len`
 * readable bytes; `out` must be valid.
 */
enum FdStatus fd_auc(const double *scores, const uint8_t *labels, uintptr_t len, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FAIRDIET_H */
