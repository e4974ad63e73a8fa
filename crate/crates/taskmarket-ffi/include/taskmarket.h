#ifndef TASKMARKET_H
#define TASKMARKET_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TmStatus {
  TmStatus_Ok = 0,
  TmStatus_NullPointer = 1,
  TmStatus_InvalidArgument = 2,
  TmStatus_ParseError = 3,
  TmStatus_RunError = 4,
  TmStatus_Panic = 5,
} TmStatus;

// Opaque experiment configuration handle.
typedef struct TmConfig TmConfig;

// Opaque handle to the outcome of one simulation run.
typedef struct TmReport TmReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last error on this thread. Borrowed pointer,
// valid until the next failing call on the same thread; never NULL.
const char *tm_last_error_message(void);

// Library version as a static string.
const char *tm_version(void);

// Fresh desk-scale configuration. Free with `tm_config_free`.
struct TmConfig *tm_config_default(void);

// Parse a configuration from TOML text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be a valid pointer.
enum TmStatus tm_config_from_toml(const char *text, struct TmConfig **out);

// Load a configuration from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum TmStatus tm_config_from_file(const char *path, struct TmConfig **out);

// # Safety
// `cfg` must be a live handle from this library.
enum TmStatus tm_config_set_devices(struct TmConfig *cfg, uint32_t devices);

// # Safety
// `cfg` must be a live handle from this library.
enum TmStatus tm_config_set_horizon_ms(struct TmConfig *cfg, uint64_t horizon_ms);

// # Safety
// `cfg` must be NULL or a handle from this library, not yet freed.
void tm_config_free(struct TmConfig *cfg);

// Run one simulation with the named matcher (alias or canonical name) and
// seed. On success the report handle must be freed with `tm_report_free`.
//
// # Safety
// `cfg` must be a live handle; `matcher` a NUL-terminated string; `out` a
// valid pointer.
enum TmStatus tm_run(const struct TmConfig *cfg,
                     const char *matcher,
                     uint64_t seed,
                     struct TmReport **out);

// # Safety
// `rep` must be NULL or a handle from this library, not yet freed.
void tm_report_free(struct TmReport *rep);

// Average wait over the metrics window, seconds.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_avg_wait_s(const struct TmReport *rep, double *out);

// Maximum wait over the metrics window, seconds.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_max_wait_s(const struct TmReport *rep, double *out);

// Fraction of windowed queries slower than their self-compute baseline.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_slow_ratio(const struct TmReport *rep, double *out);

// Worst cumulative per-device net gain, seconds (non-positive).
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_max_net_loss_s(const struct TmReport *rep, double *out);

// Queries issued within the horizon.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_issued(const struct TmReport *rep, uint64_t *out);

// Queries completed within the horizon.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_completed(const struct TmReport *rep, uint64_t *out);

// Queries still open at the horizon.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_pending(const struct TmReport *rep, uint64_t *out);

// Secondary verifications drawn by the economy.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_verifications(const struct TmReport *rep, uint64_t *out);

// Sum over the credit ledger; zero by construction.
//
// # Safety
// `rep` must be a live report handle; `out` a valid pointer.
enum TmStatus tm_report_ledger_sum(const struct TmReport *rep, int64_t *out);

// Full summary as a JSON document. Free with `tm_string_free`. NULL on
// error.
//
// # Safety
// `rep` must be a live report handle.
char *tm_report_summary_json(const struct TmReport *rep);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void tm_string_free(char *s);

// Expected maximum completion time over a seller pair: each side has a
// deterministic delay (ms) plus, when flagged stochastic, an Exp(alpha)
// re-entry delay (alpha in 1/ms).
//
// # Safety
// `out` must be a valid pointer.
enum TmStatus tm_expected_max_wait_ms(double c1_ms,
                                      bool stochastic1,
                                      double c2_ms,
                                      bool stochastic2,
                                      double alpha,
                                      double *out);

// Probability that a completed query is sent for secondary verification,
// from the sellers' credits and result perplexities.
//
// # Safety
// `out` must be a valid pointer.
enum TmStatus tm_verification_probability(int64_t credit1,
                                          int64_t credit2,
                                          double perplexity1,
                                          double perplexity2,
                                          double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TASKMARKET_H */
