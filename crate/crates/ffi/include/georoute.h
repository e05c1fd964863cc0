#ifndef GEOROUTE_H
#define GEOROUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GrStatus {
  GR_STATUS_OK = 0,
  GR_STATUS_NULL_ARGUMENT = 1,
  GR_STATUS_INVALID_ARGUMENT = 2,
  GR_STATUS_INVALID_UTF8 = 3,
  GR_STATUS_CONFIG = 4,
  GR_STATUS_RUNTIME = 5,
  GR_STATUS_PANIC = 6,
} GrStatus;

/**
 * Opaque prefix index handle.
 */
typedef struct GrPrefixIndex GrPrefixIndex;

typedef struct GrCostBreakdown {
  double network_ms;
  double prefill_ms;
  double queue_ms;
  double total_ms;
} GrCostBreakdown;

typedef struct GrCalibration {
  double intercept;
  double slope;
  double r_squared;
  size_t n;
} GrCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *gr_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void gr_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gr_version(void);

enum GrStatus gr_prefix_index_new(size_t block_size,
                                  size_t capacity_blocks,
                                  struct GrPrefixIndex **out);

void gr_prefix_index_free(struct GrPrefixIndex *index);

/**
 * Records that `node` holds the KV blocks of `tokens`.
 */
enum GrStatus gr_prefix_index_insert(struct GrPrefixIndex *index,
                                     const uint32_t *tokens,
                                     size_t len,
                                     const char *node,
                                     uint64_t now);

/**
 * Longest indexed prefix of `tokens` held by any node, in tokens.
 */
enum GrStatus gr_prefix_index_longest_match(const struct GrPrefixIndex *index,
                                            const uint32_t *tokens,
                                            size_t len,
                                            size_t *out_len);

/**
 * Longest prefix of `tokens` that `node` holds, in tokens.
 */
enum GrStatus gr_prefix_index_overlap(const struct GrPrefixIndex *index,
                                      const uint32_t *tokens,
                                      size_t len,
                                      const char *node,
                                      size_t *out_len);

/**
 * Drops `node` from the path of `tokens` and everything below it.
 * `out_removed` is set to whether anything changed.
 */
enum GrStatus gr_prefix_index_remove_holder(struct GrPrefixIndex *index,
                                            const uint32_t *tokens,
                                            size_t len,
                                            const char *node,
                                            bool *out_removed);

/**
 * Number of blocks currently stored.
 */
enum GrStatus gr_prefix_index_total_blocks(const struct GrPrefixIndex *index, size_t *out);

/**
 * Cost of serving a prompt of `l_p` tokens, `l_hit` of them cached, behind
 * `pending_tokens` of queued work, `network_ms` away.
 */
enum GrStatus gr_estimate_cost(double network_ms,
                               uint64_t l_p,
                               uint64_t l_hit,
                               uint64_t pending_tokens,
                               double t_p,
                               double q_s,
                               struct GrCostBreakdown *out);

enum GrStatus gr_haversine_km(double lat1, double lon1, double lat2, double lon2, double *out_km);

/**
 * 64-bit FNV-1a of a NUL-terminated UTF-8 prompt.
 */
enum GrStatus gr_prompt_hash(const char *prompt, uint64_t *out);

/**
 * Least-squares prefill fit over `n` `(input_tokens[i], ttft_ms[i])` pairs.
 */
enum GrStatus gr_fit_calibration(const uint64_t *input_tokens,
                                 const double *ttft_ms,
                                 size_t n,
                                 struct GrCalibration *out);

/**
 * Runs a simulation from a TOML config document and returns the run report
 * as JSON. Relative file paths in the config resolve against the working
 * directory.
 */
enum GrStatus gr_simulate_toml(const char *config_toml, char **out_report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOROUTE_H */
