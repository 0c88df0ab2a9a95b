#ifndef SLOTFUSE_H
#define SLOTFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  // A required pointer argument was null.
  SF_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SF_STATUS_INVALID_UTF8 = 2,
  // Missing, unreadable or malformed input, or an invalid option.
  SF_STATUS_INPUT = 3,
  // Input that parses but violates the data contract.
  SF_STATUS_CONTRACT = 4,
  // Training produced a non-finite loss.
  SF_STATUS_NUMERIC = 5,
  // An internal panic was caught at the boundary.
  SF_STATUS_PANIC = 6,
} SfStatus;

// Opaque corpus handle.
typedef struct SfCorpus SfCorpus;

// Opaque encoder handle.
typedef struct SfModel SfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *sf_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void sf_string_free(char *s);

// Loads a dataset file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum SfStatus sf_corpus_load(const char *path, struct SfCorpus **out);

// Parses a dataset from JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum SfStatus sf_corpus_from_json(const char *json, struct SfCorpus **out);

// Number of turns over all dialogues; 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t sf_corpus_turn_count(const struct SfCorpus *corpus);

// # Safety
// `corpus` must be null or a live handle, which is invalid afterwards.
void sf_corpus_free(struct SfCorpus *corpus);

// Loads an encoder checkpoint.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum SfStatus sf_model_load(const char *path, struct SfModel **out);

// Trains the selector on `corpus` with default hyperparameters except for
// `seed` and `epochs`.
//
// # Safety
// `corpus` must be a live handle; `out` must be writable.
enum SfStatus sf_model_train(const struct SfCorpus *corpus,
                             uint64_t seed,
                             size_t epochs,
                             struct SfModel **out);

// Writes the model as a checkpoint file.
//
// # Safety
// `model` must be a live handle; `path` a nul-terminated string.
enum SfStatus sf_model_save(const struct SfModel *model, const char *path);

// # Safety
// `model` must be null or a live handle, which is invalid afterwards.
void sf_model_free(struct SfModel *model);

// Scores every schema slot against `history` and writes
// `{"scores": {"domain-slot": score, ...}, "selected": [...]}` to `out`.
//
// # Safety
// Handles must be live; `history` nul-terminated; `out` writable.
enum SfStatus sf_select(const struct SfModel *model,
                        const struct SfCorpus *corpus,
                        const char *history,
                        double delta,
                        char **out);

// Predicts every turn of `corpus` and writes the JSON prediction dump to
// `out`. With a null `model` the turn's gold slots are selected;
// `ablation` is one of full, -prompt, -OT, -CV and `generator` one of
// extractive, gold-oracle.
//
// # Safety
// `corpus` must be live, `model` null or live, strings nul-terminated and
// `out` writable.
enum SfStatus sf_predict(const struct SfCorpus *corpus,
                         const struct SfModel *model,
                         double delta,
                         const char *ablation,
                         const char *generator,
                         char **out);

// Scores a JSON prediction dump against `corpus`, writing joint goal
// accuracy and slot accuracy as fractions in [0, 1].
//
// # Safety
// `corpus` must be live, `dump_json` nul-terminated, outputs writable.
enum SfStatus sf_evaluate(const struct SfCorpus *corpus,
                          const char *dump_json,
                          double *jga,
                          double *sa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLOTFUSE_H */
