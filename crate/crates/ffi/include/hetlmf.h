#ifndef HETLMF_H
#define HETLMF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HetlmfStatus {
  HETLMF_STATUS_OK = 0,
  HETLMF_STATUS_NULL_POINTER = 1,
  HETLMF_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed or invalid configuration JSON.
   */
  HETLMF_STATUS_CONFIG_ERROR = 3,
  /**
   * Law, population or argument outside the model's domain.
   */
  HETLMF_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A numerical or estimation step failed.
   */
  HETLMF_STATUS_NUMERICAL_ERROR = 5,
  /**
   * The operation does not support the given law or size.
   */
  HETLMF_STATUS_UNSUPPORTED = 6,
  HETLMF_STATUS_IO_ERROR = 7,
  /**
   * A Rust panic was caught; the message holds its payload.
   */
  HETLMF_STATUS_PANIC = 8,
} HetlmfStatus;

/**
 * Law family for [`hetlmf_population_new`].
 */
typedef enum HetlmfLawKind {
  /**
   * Single-order metaorders (random trader); parameter ignored.
   */
  HETLMF_LAW_KIND_DEGENERATE = 0,
  /**
   * Geometric lengths; parameter is the decay length.
   */
  HETLMF_LAW_KIND_EXPONENTIAL = 1,
  /**
   * Discrete Pareto lengths; parameter is the tail exponent.
   */
  HETLMF_LAW_KIND_PARETO = 2,
} HetlmfLawKind;

typedef enum HetlmfInitMode {
  HETLMF_INIT_MODE_STATIONARY = 0,
  HETLMF_INIT_MODE_FRESH_DRAW = 1,
} HetlmfInitMode;

/**
 * Opaque trader population.
 */
typedef struct HetlmfPopulation HetlmfPopulation;

/**
 * Opaque running simulation. Owns a private copy of its population.
 */
typedef struct HetlmfSimulator HetlmfSimulator;

typedef struct HetlmfLaw {
  enum HetlmfLawKind kind;
  double parameter;
} HetlmfLaw;

/**
 * Scalar part of a prefactor report.
 */
typedef struct HetlmfPrefactorReport {
  double alpha;
  double mu;
  size_t m_pt;
  double c0_sk;
  double c0_lmf;
  double c0_upper;
  double q0_sk;
  double q0_bbdg;
  double q0_upper;
  double ratio;
  double lower_slack;
  double upper_slack;
} HetlmfPrefactorReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *hetlmf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hetlmf_version(void);

/**
 * Builds a population from an experiment-config JSON document (its `groups`).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum HetlmfStatus hetlmf_population_from_config_json(const char *json,
                                                     struct HetlmfPopulation **out);

/**
 * Builds a population from `n` intensities and laws; intensities are rescaled to sum to one.
 *
 * # Safety
 * `intensities` and `laws` must point to `n` readable elements; `out` must be writable.
 */
enum HetlmfStatus hetlmf_population_new(const double *intensities,
                                        const struct HetlmfLaw *laws,
                                        size_t n,
                                        struct HetlmfPopulation **out);

/**
 * # Safety
 * `population` must be null or a handle from this library that has not been freed.
 */
void hetlmf_population_free(struct HetlmfPopulation *population);

/**
 * Number of traders, or 0 for a null handle.
 *
 * # Safety
 * `population` must be null or a live handle.
 */
size_t hetlmf_population_len(const struct HetlmfPopulation *population);

/**
 * Copies the (rescaled) intensities into `out[0..n]`, `n` = population length.
 *
 * # Safety
 * `population` must be a live handle and `out` must have room for `n` values.
 */
enum HetlmfStatus hetlmf_population_intensities(const struct HetlmfPopulation *population,
                                                double *out,
                                                size_t n);

/**
 * Exact stationary market ACF at `n_lags` lags (each >= 1), written to `out`.
 *
 * # Safety
 * `lags` must hold `n_lags` readable values and `out` room for as many.
 */
enum HetlmfStatus hetlmf_exact_acf(const struct HetlmfPopulation *population,
                                   const uint64_t *lags,
                                   size_t n_lags,
                                   double *out);

/**
 * Creates a simulator over a private copy of `population`.
 *
 * # Safety
 * `population` must be a live handle and `out` writable.
 */
enum HetlmfStatus hetlmf_simulator_new(const struct HetlmfPopulation *population,
                                       uint64_t seed,
                                       enum HetlmfInitMode init,
                                       struct HetlmfSimulator **out);

/**
 * Advances `steps` market orders, writing their signs (+1/-1) to `signs` unless it is null.
 *
 * # Safety
 * `simulator` must be a live handle; a non-null `signs` must have room for `steps` values.
 */
enum HetlmfStatus hetlmf_simulator_run(struct HetlmfSimulator *simulator,
                                       uint64_t steps,
                                       int8_t *signs);

/**
 * Steps executed so far, or 0 for a null handle.
 *
 * # Safety
 * `simulator` must be null or a live handle.
 */
uint64_t hetlmf_simulator_steps(const struct HetlmfSimulator *simulator);

/**
 * # Safety
 * `simulator` must be null or a handle from this library that has not been freed.
 */
void hetlmf_simulator_free(struct HetlmfSimulator *simulator);

/**
 * Sample ACF of a sign series at lags `1..=max_lag`; `stderr` may be null.
 * Requires `len > 10 * max_lag`.
 *
 * # Safety
 * `signs` must hold `len` values; `values` (and a non-null `stderr`) room for `max_lag`.
 */
enum HetlmfStatus hetlmf_acf_estimate(const int8_t *signs,
                                      size_t len,
                                      size_t max_lag,
                                      double *values,
                                      double *stderr);

/**
 * Prefactor families and their two-sided inequality for power-law splitters.
 *
 * # Safety
 * `intensities` must hold `n` values and `out` be writable.
 */
enum HetlmfStatus hetlmf_prefactor_report(const double *intensities,
                                          size_t n,
                                          double alpha,
                                          struct HetlmfPrefactorReport *out);

/**
 * Smallest splitter count compatible with an observed ACF prefactor.
 *
 * # Safety
 * `out` must be writable.
 */
enum HetlmfStatus hetlmf_lower_bound_pt_count(double mu, double alpha, double c0, double *out);

/**
 * Per-trader ACF of an exponential splitter in closed form.
 *
 * # Safety
 * `out` must be writable.
 */
enum HetlmfStatus hetlmf_exponential_acf(double lambda,
                                         double decay_length,
                                         uint64_t tau,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETLMF_H */
