#ifndef DWOLS_PRIVACY_H
#define DWOLS_PRIVACY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Mirrors the CLI exit-code classes.
 */
typedef enum DwolsStatus {
  DWOLS_STATUS_OK = 0,
  DWOLS_STATUS_NULL_POINTER = 1,
  DWOLS_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, input data or I/O.
   */
  DWOLS_STATUS_CONFIG = 3,
  /**
   * Singular design, non-convergence, separation.
   */
  DWOLS_STATUS_NUMERICAL = 4,
  /**
   * Fingerprint mismatch, duplicate site, malformed summary.
   */
  DWOLS_STATUS_PROTOCOL = 5,
  DWOLS_STATUS_BUFFER_TOO_SMALL = 6,
  DWOLS_STATUS_PANIC = 7,
} DwolsStatus;

typedef enum DwolsDoseKind {
  DWOLS_DOSE_KIND_INTERIOR = 0,
  DWOLS_DOSE_KIND_BOUNDARY = 1,
  DWOLS_DOSE_KIND_FLAT_BLIP = 2,
  /**
   * Linear blip: the "dose" is the 0/1 treatment decision.
   */
  DWOLS_DOSE_KIND_BINARY = 3,
} DwolsDoseKind;

/**
 * Coordinator collecting site summaries.
 */
typedef struct DwolsAggregator DwolsAggregator;

/**
 * Design and treatment-model choices shared by all sites.
 */
typedef struct DwolsConfig DwolsConfig;

/**
 * Individual-level rows of one or more sites.
 */
typedef struct DwolsDataset DwolsDataset;

/**
 * Fitted blip parameters.
 */
typedef struct DwolsEstimate DwolsEstimate;

/**
 * One site's XᵀWX / XᵀWy summary.
 */
typedef struct DwolsSiteSummary DwolsSiteSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *dwols_last_error_message(void);

void dwols_string_free(char *s);

/**
 * Parses a CSV file with columns `site`, covariates..., `a`, `y`.
 */
enum DwolsStatus dwols_dataset_from_csv_path(const char *path, struct DwolsDataset **out);

/**
 * Same as [`dwols_dataset_from_csv_path`] with the CSV text in memory.
 */
enum DwolsStatus dwols_dataset_from_csv_str(const char *text, struct DwolsDataset **out);

enum DwolsStatus dwols_dataset_len(const struct DwolsDataset *dataset, size_t *out_len);

void dwols_dataset_free(struct DwolsDataset *dataset);

/**
 * Analysis config from TOML text (`[design]`, `[treatment]`, `ipw_cap`).
 */
enum DwolsStatus dwols_config_from_toml(const char *text, struct DwolsConfig **out);

enum DwolsStatus dwols_config_from_json(const char *text, struct DwolsConfig **out);

void dwols_config_free(struct DwolsConfig *config);

/**
 * Site-local step: fits the treatment model on this site's rows and
 * forms XᵀWX / XᵀWy. `dataset` must hold a single site.
 */
enum DwolsStatus dwols_site_summary_compute(const struct DwolsDataset *dataset,
                                            const struct DwolsConfig *config,
                                            struct DwolsSiteSummary **out);

/**
 * JSON wire form of a summary; release with [`dwols_string_free`].
 */
enum DwolsStatus dwols_site_summary_to_json(const struct DwolsSiteSummary *summary, char **out);

/**
 * Parses and fingerprint-checks a summary received from a site.
 */
enum DwolsStatus dwols_site_summary_from_json(const char *text, struct DwolsSiteSummary **out);

void dwols_site_summary_free(struct DwolsSiteSummary *summary);

struct DwolsAggregator *dwols_aggregator_new(void);

/**
 * Copies `summary` into the aggregator; the caller keeps ownership.
 */
enum DwolsStatus dwols_aggregator_add(struct DwolsAggregator *aggregator,
                                      const struct DwolsSiteSummary *summary);

/**
 * Sums the collected summaries and solves for θ. `config` may be null,
 * in which case the design is read back from the summaries' columns.
 */
enum DwolsStatus dwols_aggregator_solve(const struct DwolsAggregator *aggregator,
                                        const struct DwolsConfig *config,
                                        struct DwolsEstimate **out);

void dwols_aggregator_free(struct DwolsAggregator *aggregator);

/**
 * Centralized fit on individual-level data.
 */
enum DwolsStatus dwols_estimate_gold(const struct DwolsDataset *dataset,
                                     const struct DwolsConfig *config,
                                     struct DwolsEstimate **out);

/**
 * Copies ψ into `buf`. With `buf` null or too short, only `out_len` is
 * written (and `BUFFER_TOO_SMALL` returned when `buf` is non-null).
 */
enum DwolsStatus dwols_estimate_psi(const struct DwolsEstimate *estimate,
                                    double *buf,
                                    size_t buf_len,
                                    size_t *out_len);

enum DwolsStatus dwols_estimate_to_json(const struct DwolsEstimate *estimate, char **out);

/**
 * Recommendation for one subject given by `n` named covariates.
 *
 * Quadratic blips return the dose maximizing the blip on `[a_min, a_max]`.
 * Linear blips ignore the range and return 1.0 (treat) or 0.0 with kind
 * `BINARY`.
 */
enum DwolsStatus dwols_optimal_dose(const struct DwolsEstimate *estimate,
                                    const char *const *names,
                                    const double *values,
                                    size_t n,
                                    double a_min,
                                    double a_max,
                                    double *out_dose,
                                    enum DwolsDoseKind *out_kind);

void dwols_estimate_free(struct DwolsEstimate *estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWOLS_PRIVACY_H */
