#ifndef FUSIONREC_H
#define FUSIONREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum FrStatus {
  FR_STATUS_OK = 0,
  FR_STATUS_NULL_ARGUMENT = 1,
  FR_STATUS_INVALID_ARGUMENT = 2,
  FR_STATUS_IO = 3,
  FR_STATUS_CORRUPT = 4,
  FR_STATUS_INCOMPATIBLE = 5,
  FR_STATUS_UNKNOWN_SEED = 6,
  FR_STATUS_MISSING_EMBEDDING = 7,
  FR_STATUS_OUT_OF_RANGE = 8,
  FR_STATUS_INTERNAL = 99,
} FrStatus;

// Loaded catalog, models and index.
typedef struct FrEngine FrEngine;

// Ranked output of one query.
typedef struct FrResults FrResults;

// Similarity components of one recommendation.
typedef struct FrScore {
  double combined;
  double fusion;
  double genre;
  double tfidf;
} FrScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fr_version(void);

// Message for the last failed call on this thread, or an empty string.
// Valid until the next call into the library from the same thread.
const char *fr_last_error_message(void);

// Opens an engine. `embeddings` may be null to use the built-in hashing
// encoder; otherwise it names an embedding file. TF-IDF is refit from the
// catalog and checked against the index.
//
// # Safety
// Path arguments must be valid NUL-terminated strings (`embeddings` may be
// null) and `out` must point to writable storage for one pointer.
enum FrStatus fr_engine_open(const char *catalog,
                             const char *genre_model,
                             const char *model,
                             const char *index,
                             const char *embeddings,
                             struct FrEngine **out);

// # Safety
// `engine` must be null or a handle from [`fr_engine_open`] not yet freed.
void fr_engine_free(struct FrEngine *engine);

// Number of target items in the engine's index.
//
// # Safety
// `engine` must be a live handle and `out` writable.
enum FrStatus fr_engine_index_len(const struct FrEngine *engine, size_t *out);

// Ranks target items for `n_seeds` source item ids. `weights` is null for
// the engine defaults or points to three values (fusion, genre, tf-idf)
// that are non-negative and sum to one.
//
// # Safety
// `engine` must be a live handle, `seeds` must point to `n_seeds` valid
// strings, `weights` must be null or point to three doubles and `out` must
// be writable.
enum FrStatus fr_recommend(const struct FrEngine *engine,
                           const char *const *seeds,
                           size_t n_seeds,
                           size_t k,
                           const double *weights,
                           struct FrResults **out);

// Number of recommendations, or 0 for a null handle.
//
// # Safety
// `results` must be null or a live handle.
size_t fr_results_len(const struct FrResults *results);

// Target id at rank `i + 1`, owned by `results`; null if out of range.
//
// # Safety
// `results` must be null or a live handle.
const char *fr_results_id(const struct FrResults *results, size_t i);

// # Safety
// `results` must be a live handle and `out` writable.
enum FrStatus fr_results_score(const struct FrResults *results, size_t i, struct FrScore *out);

// # Safety
// `results` must be null or a handle from [`fr_recommend`] not yet freed.
void fr_results_free(struct FrResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONREC_H */
