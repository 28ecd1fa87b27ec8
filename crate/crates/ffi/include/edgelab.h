#ifndef EDGELAB_H
#define EDGELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum ElStatus {
  EL_STATUS_OK = 0,
  EL_STATUS_NULL_ARGUMENT = 1,
  EL_STATUS_CONFIG = 2,
  EL_STATUS_SHAPE = 3,
  EL_STATUS_TOKEN_OUT_OF_RANGE = 4,
  EL_STATUS_SEQUENCE_TOO_LONG = 5,
  EL_STATUS_NON_MONOTONE_POSITION = 6,
  EL_STATUS_INVALID_INPUT = 7,
  EL_STATUS_CONTRACT_VIOLATION = 8,
  EL_STATUS_FORMAT = 9,
  EL_STATUS_IO = 10,
  EL_STATUS_JSON = 11,
  EL_STATUS_UTF8 = 12,
  EL_STATUS_BUFFER_TOO_SMALL = 13,
  EL_STATUS_PANIC = 14,
} ElStatus;

/**
 * Opaque KV cache handle, bound to the geometry of the model it was made for.
 */
typedef struct ElCache ElCache;

/**
 * Opaque model handle.
 */
typedef struct ElModel ElModel;

/**
 * Counters from one speculative decode.
 */
typedef struct ElSpecStats {
  uint64_t rounds;
  uint64_t proposed;
  uint64_t accepted;
  uint64_t emitted;
  double block_efficiency;
} ElSpecStats;

/**
 * ROUGE F1 scores of a hypothesis against a reference.
 */
typedef struct ElRouge {
  double rouge1;
  double rouge2;
  double rouge_l;
} ElRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty when none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *el_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *el_version(void);

/**
 * Seeded model from a JSON model config (same fields as the CLI config's
 * `model` object; `NULL` selects the defaults).
 *
 * # Safety
 * `config_json` must be NULL or a valid C string; `out` must be writable.
 */
enum ElStatus el_model_init(const char *config_json, uint64_t seed, struct ElModel **out);

/**
 * Loads a model from the binary model format.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum ElStatus el_model_load(const char *path, struct ElModel **out);

/**
 * Saves a model in the binary model format.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
enum ElStatus el_model_save(const struct ElModel *model, const char *path);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void el_model_free(struct ElModel *model);

/**
 * Vocabulary size of the model, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t el_model_vocab_size(const struct ElModel *model);

/**
 * Exact bits per weight of the model's matrices.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum ElStatus el_model_bpw(const struct ElModel *model, double *out);

/**
 * Post-training quantization of every matrix with symmetric per-group codes
 * of `bits` bits and group size `group`. The result is a new handle.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum ElStatus el_model_quantize(const struct ElModel *model,
                                uint8_t bits,
                                size_t group,
                                struct ElModel **out);

/**
 * Greedy decoding. Writes prompt plus continuation into `out_tokens`.
 *
 * # Safety
 * Pointers must be valid for their stated lengths; `out_len` may be NULL.
 */
enum ElStatus el_greedy_decode(const struct ElModel *model,
                               const uint32_t *prompt,
                               size_t prompt_len,
                               size_t max_new,
                               uint32_t *out_tokens,
                               size_t cap,
                               size_t *out_len);

/**
 * Lossless speculative decoding with `draft` as an independent draft model
 * proposing `k` tokens per round. Output equals greedy decoding of `target`.
 *
 * # Safety
 * Pointers must be valid for their stated lengths; `out_len` and `stats`
 * may be NULL.
 */
enum ElStatus el_speculative_decode(const struct ElModel *target,
                                    const struct ElModel *draft,
                                    const uint32_t *prompt,
                                    size_t prompt_len,
                                    size_t k,
                                    size_t max_new,
                                    uint32_t *out_tokens,
                                    size_t cap,
                                    size_t *out_len,
                                    struct ElSpecStats *stats);

/**
 * Empty KV cache shaped for `model`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum ElStatus el_cache_new(const struct ElModel *model, struct ElCache **out);

/**
 * Releases a cache handle. NULL is ignored.
 *
 * # Safety
 * `cache` must be NULL or a handle not yet freed.
 */
void el_cache_free(struct ElCache *cache);

/**
 * Number of entries held by `layer`, or 0 for NULL or an unknown layer.
 *
 * # Safety
 * `cache` must be NULL or a live handle.
 */
size_t el_cache_layer_len(const struct ElCache *cache, size_t layer);

/**
 * Cache footprint in bytes at `bytes_per_element` bytes per stored value.
 *
 * # Safety
 * `cache` must be a live handle; `out` must be writable.
 */
enum ElStatus el_cache_bytes(const struct ElCache *cache,
                             uint64_t bytes_per_element,
                             uint64_t *out);

/**
 * Appends `tokens` through the cache and writes the logits of the last
 * token (vocabulary-sized) into `out_logits`; `out_next` receives their
 * argmax.
 *
 * # Safety
 * Pointers must be valid for their stated lengths; `out_next` may be NULL.
 */
enum ElStatus el_forward(const struct ElModel *model,
                         struct ElCache *cache,
                         const uint32_t *tokens,
                         size_t len,
                         float *out_logits,
                         size_t cap,
                         uint32_t *out_next);

/**
 * One-shot eviction of every layer down to `budget` entries. `policy_json`
 * uses the CLI config's policy objects, e.g. `{"kind":"heavy_hitter","recent":16}`.
 * `out_fraction` receives evicted entries over entries before eviction.
 *
 * # Safety
 * `cache` must be a live handle and `policy_json` a valid C string;
 * `out_fraction` may be NULL.
 */
enum ElStatus el_cache_evict(struct ElCache *cache,
                             const char *policy_json,
                             size_t budget,
                             double *out_fraction);

/**
 * ROUGE-1/2/L F1 of two texts (whitespace tokens, lowercase, clipped counts).
 *
 * # Safety
 * Both strings must be valid C strings; `out` must be writable.
 */
enum ElStatus el_rouge(const char *reference, const char *hypothesis, struct ElRouge *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGELAB_H */
