#ifndef HTE_H
#define HTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which average effect [`hte_fit_effect`] returns.
typedef enum HteEffect {
  // Average treatment effect (both models).
  HTE_EFFECT_ATE = 0,
  // Effect on the treated (Gaussian model).
  HTE_EFFECT_ATT = 1,
  // Effect on the untreated (Gaussian model).
  HTE_EFFECT_ATU = 2,
  // `E[y1 | y0 = 0]` (censored model).
  HTE_EFFECT_HTE_AT_ZERO = 3,
} HteEffect;

// Study design of a dataset.
typedef enum HteSetup {
  HTE_SETUP_RCT_ONE_SIDED = 0,
  HTE_SETUP_OBS_MICRO = 1,
  HTE_SETUP_OBS_MACRO = 2,
} HteSetup;

// Result code of every fallible call.
typedef enum HteStatus {
  HTE_STATUS_OK = 0,
  HTE_STATUS_NULL_POINTER = 1,
  HTE_STATUS_INVALID_UTF8 = 2,
  HTE_STATUS_OUT_OF_RANGE = 3,
  HTE_STATUS_CONFIG = 4,
  HTE_STATUS_USAGE = 5,
  HTE_STATUS_PARSE = 6,
  HTE_STATUS_IO = 7,
  HTE_STATUS_DATA = 8,
  HTE_STATUS_NUMERICAL = 9,
  HTE_STATUS_INITIALIZATION = 10,
  HTE_STATUS_ESTIMAND = 11,
  HTE_STATUS_PANIC = 12,
} HteStatus;

// Run configuration (JSON schema of the `hte` CLI).
typedef struct HteConfig HteConfig;

// Validated dataset.
typedef struct HteDataset HteDataset;

// Result of one model fit.
typedef struct HteFit HteFit;

// Mean, sd and equal-tailed 95% interval of a posterior quantity.
typedef struct HteSummary {
  double mean;
  double sd;
  double lo95;
  double hi95;
} HteSummary;

// One point of the HTE curve; `flagged` is 1 when the value is undefined (NaN).
typedef struct HteCurvePoint {
  double y0;
  double mean;
  double lo95;
  double hi95;
  int32_t flagged;
} HteCurvePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hte_version(void);

// Message of the last failed call on this thread, or an empty string.
//
// The pointer is valid until the next library call on this thread.
const char *hte_last_error_message(void);

// Default configuration: Gaussian model, marginal posterior.
//
// # Safety
// `out` must be a valid pointer.
enum HteStatus hte_config_new_default(struct HteConfig **out);

// Parses a JSON run configuration. Unknown keys are rejected.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum HteStatus hte_config_from_json(const char *json, struct HteConfig **out);

// Sets the sampler length (total iterations per chain, including warmup).
//
// # Safety
// `config` must be a live handle.
enum HteStatus hte_config_set_iterations(struct HteConfig *config,
                                         size_t iterations,
                                         size_t warmup,
                                         size_t chains);

// Releases a configuration. Null is ignored.
//
// # Safety
// `config` must be null or a handle not yet freed.
void hte_config_free(struct HteConfig *config);

// Reads a dataset CSV with header `id,r,z,y1,y0,x1..xd` (missing values `NA`).
//
// `censored` nonzero rejects negative outcomes.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HteStatus hte_dataset_read_csv(const char *path,
                                    enum HteSetup setup,
                                    int32_t censored,
                                    struct HteDataset **out);

// Builds a dataset from column arrays of length `n`.
//
// `r` is 0/1. `z` is 0/1 or -1 for missing. Missing outcomes are NaN.
// `x` is row-major `n × d`. Ids are the 1-based row numbers.
//
// # Safety
// Each array must hold `n` elements (`n * d` for `x`); `out` must be valid.
enum HteStatus hte_dataset_from_arrays(size_t n,
                                       size_t d,
                                       const int32_t *r,
                                       const int32_t *z,
                                       const double *y1,
                                       const double *y0,
                                       const double *x,
                                       enum HteSetup setup,
                                       struct HteDataset **out);

// Simulates a dataset from the configuration's design.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum HteStatus hte_dataset_simulate(const struct HteConfig *config,
                                    uint64_t seed,
                                    struct HteDataset **out);

// Number of units.
//
// # Safety
// `data` must be a live handle.
size_t hte_dataset_len(const struct HteDataset *data);

// Covariate dimension.
//
// # Safety
// `data` must be a live handle.
size_t hte_dataset_dim(const struct HteDataset *data);

// Releases a dataset. Null is ignored.
//
// # Safety
// `data` must be null or a handle not yet freed.
void hte_dataset_free(struct HteDataset *data);

// Fits the configured model and target to `data`.
//
// # Safety
// `data` and `config` must be live handles and `out` a valid pointer.
enum HteStatus hte_estimate(const struct HteDataset *data,
                            const struct HteConfig *config,
                            uint64_t seed,
                            struct HteFit **out);

// Number of model parameters.
//
// # Safety
// `fit` must be a live handle.
size_t hte_fit_param_count(const struct HteFit *fit);

// Name of parameter `index`, or null when out of range. Owned by `fit`.
//
// # Safety
// `fit` must be a live handle.
const char *hte_fit_param_name(const struct HteFit *fit, size_t index);

// Posterior summary of parameter `index`.
//
// # Safety
// `fit` must be a live handle and `out` a valid pointer.
enum HteStatus hte_fit_param_summary(const struct HteFit *fit,
                                     size_t index,
                                     struct HteSummary *out);

// Posterior summary of an average effect.
//
// # Safety
// `fit` must be a live handle and `out` a valid pointer.
enum HteStatus hte_fit_effect(const struct HteFit *fit,
                              enum HteEffect effect,
                              struct HteSummary *out);

// Number of HTE curve grid points.
//
// # Safety
// `fit` must be a live handle.
size_t hte_fit_curve_len(const struct HteFit *fit);

// HTE curve point `index`.
//
// # Safety
// `fit` must be a live handle and `out` a valid pointer.
enum HteStatus hte_fit_curve_point(const struct HteFit *fit,
                                   size_t index,
                                   struct HteCurvePoint *out);

// Writes params.json, estimands.json, hte_curve.csv and diagnostics.json to `dir`.
//
// # Safety
// `fit` must be a live handle and `dir` a NUL-terminated string.
enum HteStatus hte_fit_write(const struct HteFit *fit, const char *dir);

// Releases a fit. Null is ignored.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void hte_fit_free(struct HteFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HTE_H */
