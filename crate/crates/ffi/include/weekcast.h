#ifndef WEEKCAST_H
#define WEEKCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Include the Black Friday / Cyber Monday flag as a regressor.
 */
#define WC_FLAG_PEAK 1

/**
 * Include the default COVID scenario flag as a regressor.
 */
#define WC_FLAG_COVID 2

typedef enum WcStatus {
  WC_STATUS_OK = 0,
  WC_STATUS_NULL_ARGUMENT = 1,
  WC_STATUS_INVALID_UTF8 = 2,
  WC_STATUS_USAGE = 3,
  WC_STATUS_DATA = 4,
  WC_STATUS_NUMERICAL = 5,
  WC_STATUS_PANIC = 6,
} WcStatus;

/**
 * A forecast distribution.
 */
typedef struct WcForecast WcForecast;

/**
 * A fitted SARIMAX model.
 */
typedef struct WcModel WcModel;

/**
 * A weekly series.
 */
typedef struct WcSeries WcSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *wc_last_error(void);

/**
 * Library version string (static).
 */
const char *wc_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void wc_string_free(char *s);

/**
 * Creates a series starting on the Monday `start_week` (`YYYY-MM-DD`).
 *
 * # Safety
 * `name` and `start_week` must be NUL-terminated strings, `values` must point
 * to `len` doubles and `out` must be a valid pointer.
 */
enum WcStatus wc_series_new(const char *name,
                            const char *start_week,
                            const double *values,
                            size_t len,
                            struct WcSeries **out);

/**
 * # Safety
 * `s` must be NULL or a handle from `wc_series_new`, not freed before.
 */
void wc_series_free(struct WcSeries *s);

/**
 * # Safety
 * `s` must be a valid series handle.
 */
size_t wc_series_len(const struct WcSeries *s);

/**
 * Fits SARIMAX of order `order[7]` = {p, d, q, P, D, Q, s}.
 * `flags` is a combination of `WC_FLAG_PEAK` and `WC_FLAG_COVID`; `log` fits on logs.
 * Flags that are constant after differencing are left out.
 *
 * # Safety
 * `series` must be a valid handle, `order` must point to 7 values and `out` must be valid.
 */
enum WcStatus wc_sarimax_fit(const struct WcSeries *series,
                             const size_t *order,
                             uint32_t flags,
                             bool log,
                             uint64_t seed,
                             struct WcModel **out);

/**
 * Selects the order by AICc over the default search space and fits it.
 *
 * # Safety
 * `series` must be a valid handle and `out` must be valid.
 */
enum WcStatus wc_autofit(const struct WcSeries *series,
                         uint32_t flags,
                         bool log,
                         bool stepwise,
                         uint64_t seed,
                         struct WcModel **out);

/**
 * # Safety
 * `m` must be NULL or a model handle, not freed before.
 */
void wc_model_free(struct WcModel *m);

/**
 * # Safety
 * `m` must be a valid model handle.
 */
double wc_model_aicc(const struct WcModel *m);

/**
 * Lossless JSON; release with `wc_string_free`.
 *
 * # Safety
 * `m` must be a valid model handle and `out` a valid pointer.
 */
enum WcStatus wc_model_to_json(const struct WcModel *m, char **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WcStatus wc_model_from_json(const char *json, struct WcModel **out);

/**
 * Forecasts `horizon` weeks past the end of `series`, which must be the
 * series the model was fitted on.
 *
 * # Safety
 * Handles must be valid and `out` a valid pointer.
 */
enum WcStatus wc_forecast(const struct WcModel *model,
                          const struct WcSeries *series,
                          size_t horizon,
                          struct WcForecast **out);

/**
 * # Safety
 * `f` must be NULL or a forecast handle, not freed before.
 */
void wc_forecast_free(struct WcForecast *f);

/**
 * # Safety
 * `f` must be a valid forecast handle.
 */
size_t wc_forecast_horizon(const struct WcForecast *f);

/**
 * Quantile `tau` at step `h` (1-based), in levels.
 *
 * # Safety
 * `f` must be a valid forecast handle and `out` a valid pointer.
 */
enum WcStatus wc_forecast_quantile(const struct WcForecast *f, size_t h, double tau, double *out);

/**
 * False-peak scan. Writes `len` flags (0/1) and adjusted values, where `len`
 * must equal the series length.
 *
 * # Safety
 * `series` must be valid; `flags_out` and `adjusted_out` must hold `len` elements.
 */
enum WcStatus wc_scan_peaks(const struct WcSeries *series,
                            size_t window_n,
                            double k,
                            uint8_t *flags_out,
                            double *adjusted_out,
                            size_t len);

/**
 * Mean absolute percentage error, in percent.
 *
 * # Safety
 * `actual` and `predicted` must hold `n` doubles; `out` must be valid.
 */
enum WcStatus wc_mape(const double *actual, const double *predicted, size_t n, double *out);

/**
 * Mean pinball loss at quantile level `tau`.
 *
 * # Safety
 * `actual` and `predicted` must hold `n` doubles; `out` must be valid.
 */
enum WcStatus wc_pinball(const double *actual,
                         const double *predicted,
                         size_t n,
                         double tau,
                         double *out);

/**
 * Runs the pipeline from a JSON configuration; `run_dir` receives the path of
 * the new run directory (release with `wc_string_free`).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `run_dir` a valid pointer.
 */
enum WcStatus wc_pipeline_run(const char *config_json, char **run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEEKCAST_H */
