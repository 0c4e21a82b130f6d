#ifndef UIVTSP_H
#define UIVTSP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UivClassification {
  UIV_CLASSIFICATION_HONEST = 0,
  UIV_CLASSIFICATION_MONITORED = 1,
  UIV_CLASSIFICATION_SEMI_HONEST = 2,
  UIV_CLASSIFICATION_DISHONEST = 3,
  UIV_CLASSIFICATION_REMOVED = 4,
} UivClassification;

typedef enum UivPenaltyMode {
  UIV_PENALTY_MODE_LITERAL = 0,
  UIV_PENALTY_MODE_ON_LEAK = 1,
} UivPenaltyMode;

typedef enum UivScheme {
  UIV_SCHEME_TSP = 0,
  UIV_SCHEME_SP = 1,
} UivScheme;

typedef enum UivStatus {
  UIV_STATUS_OK = 0,
  UIV_STATUS_NULL_POINTER = 1,
  UIV_STATUS_INVALID_ARGUMENT = 2,
  UIV_STATUS_CONFIG = 3,
  UIV_STATUS_INTEGRITY = 4,
  UIV_STATUS_IO = 5,
  UIV_STATUS_PARSE = 6,
  UIV_STATUS_NOT_FOUND = 7,
  UIV_STATUS_BUFFER_TOO_SMALL = 8,
  UIV_STATUS_INTERNAL = 9,
} UivStatus;

/**
 * Opaque chain handle.
 */
typedef struct UivChain UivChain;

/**
 * Opaque scenario result handle.
 */
typedef struct UivRun UivRun;

/**
 * Scenario parameters. Fill with `uiv_scenario_config_default` first.
 */
typedef struct UivScenarioConfig {
  uint32_t n_workers;
  double pct_dishonest;
  double pct_semihonest;
  double delta_l;
  double delta_m;
  double delta_h;
  uint32_t cycles;
  uint8_t embed_count;
  uint32_t width_k;
  double p_leak_dishonest;
  double p_leak_semihonest;
  uint32_t trap_window_cycles;
  enum UivPenaltyMode penalty_mode;
  enum UivScheme scheme;
  uint64_t seed;
} UivScenarioConfig;

typedef struct UivCycleMetrics {
  uint32_t cycle;
  uint64_t leaks_attempted;
  uint64_t leaks_succeeded;
  uint64_t leaks_destroyed;
  uint64_t grants_real;
  uint64_t grants_false;
  uint64_t denials;
  uint64_t flagged_dishonest;
  uint64_t flagged_honest;
  uint64_t hash_invocations;
} UivCycleMetrics;

/**
 * Run-level rates; a `has_*` flag of 0 means the rate is undefined.
 */
typedef struct UivRunSummary {
  double detection_rate;
  uint8_t has_detection_rate;
  double false_alarm_rate;
  uint8_t has_false_alarm_rate;
  double leakage_probability;
  uint8_t has_leakage_probability;
  uint64_t hash_invocations;
} UivRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *uiv_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uiv_version(void);

/**
 * Hashes `data` at width `k` (256, 512 or 1024 bits) into `out`.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` to `out_len`
 * writable bytes; `written` may be null.
 */
enum UivStatus uiv_digest(const uint8_t *data,
                          size_t len,
                          uint32_t k,
                          uint8_t *out,
                          size_t out_len,
                          size_t *written);

/**
 * Trust value for the given counts.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum UivStatus uiv_trust_value(uint64_t sec, uint64_t lek, enum UivPenaltyMode mode, double *out);

/**
 * Threshold classification of a trust value.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UivStatus uiv_classify(double tr,
                            double delta_l,
                            double delta_m,
                            double delta_h,
                            enum UivClassification *out);

/**
 * Extracts the tracing token embedded in a sealed document. Returns
 * `NotFound` when the bytes carry no trailer and `Integrity` when the
 * embedded copies disagree.
 *
 * # Safety
 * `sealed` must point to `len` readable bytes and `out` to `out_len`
 * writable bytes; `written` may be null.
 */
enum UivStatus uiv_extract_tracing_token(const uint8_t *sealed,
                                         size_t len,
                                         uint8_t *out,
                                         size_t out_len,
                                         size_t *written);

/**
 * Loads a JSON Lines chain. Integrity is not checked; call
 * `uiv_chain_verify`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum UivStatus uiv_chain_load(const char *path, struct UivChain **out);

/**
 * # Safety
 * `chain` must come from this library or be null.
 */
void uiv_chain_free(struct UivChain *chain);

/**
 * Number of blocks, or 0 for a null handle.
 *
 * # Safety
 * `chain` must be a live handle or null.
 */
uint64_t uiv_chain_len(const struct UivChain *chain);

/**
 * Verifies the chain. `*valid` is 1 or 0; when invalid, `*height` holds
 * the first failing block.
 *
 * # Safety
 * All pointers must be valid.
 */
enum UivStatus uiv_chain_verify(const struct UivChain *chain, uint8_t *valid, uint64_t *height);

/**
 * Resolves a tracing value to the worker id it was issued to, written as
 * UTF-8 without a terminator. `NotFound` if the value is unknown.
 *
 * # Safety
 * `value` must point to `value_len` bytes, `out` to `out_len` writable
 * bytes; `written` may be null.
 */
enum UivStatus uiv_chain_lookup_tracing(const struct UivChain *chain,
                                        const uint8_t *value,
                                        size_t value_len,
                                        uint8_t *out,
                                        size_t out_len,
                                        size_t *written);

/**
 * Writes the default scenario parameters.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UivStatus uiv_scenario_config_default(struct UivScenarioConfig *out);

/**
 * Runs one scenario to completion.
 *
 * # Safety
 * `cfg` and `out` must be valid pointers.
 */
enum UivStatus uiv_run_scenario(const struct UivScenarioConfig *cfg, struct UivRun **out);

/**
 * # Safety
 * `run` must come from this library or be null.
 */
void uiv_run_free(struct UivRun *run);

/**
 * Number of recorded cycles, or 0 for a null handle.
 *
 * # Safety
 * `run` must be a live handle or null.
 */
uint32_t uiv_run_cycle_count(const struct UivRun *run);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum UivStatus uiv_run_cycle(const struct UivRun *run, uint32_t index, struct UivCycleMetrics *out);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum UivStatus uiv_run_summary(const struct UivRun *run, struct UivRunSummary *out);

/**
 * Writes the run's ledger as JSON Lines.
 *
 * # Safety
 * `run` must be a live handle; `path` a NUL-terminated string.
 */
enum UivStatus uiv_run_save_ledger(const struct UivRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UIVTSP_H */
