#ifndef BLOWUP_LAB_H
#define BLOWUP_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BlBlowupKind {
  BL_BLOWUP_KIND_NONE = 0,
  BL_BLOWUP_KIND_J_TO_INFINITY = 1,
  BL_BLOWUP_KIND_J_TO_ZERO = 2,
} BlBlowupKind;

typedef enum BlRegime {
  BL_REGIME_BLOWUP = 0,
  BL_REGIME_NONTRIVIAL_STEADY = 1,
  BL_REGIME_TRIVIAL_STEADY = 2,
} BlRegime;

typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_ARGUMENT = 1,
  BL_STATUS_INVALID_ARGUMENT = 2,
  BL_STATUS_INVALID_DATA = 3,
  BL_STATUS_NUMERICAL = 4,
  BL_STATUS_PANIC = 5,
} BlStatus;

/**
 * Parsed initial data `(γ₀, ρ₀)`.
 */
typedef struct BlData BlData;

/**
 * Pseudo-spectral solver state.
 */
typedef struct BlSpectral BlSpectral;

typedef struct BlRegimeReport {
  enum BlRegime regime;
  double alpha_critical;
  double te;
  /**
   * NaN unless `regime` is `Blowup`.
   */
  double t_blowup;
} BlRegimeReport;

typedef struct BlBlowupEstimate {
  enum BlBlowupKind kind;
  double t_est;
  double t_lo;
  double t_hi;
  double t_resolved;
  /**
   * NaN when no rate fit was made.
   */
  double exponent;
  double r2;
} BlBlowupEstimate;

typedef struct BlSpectralDiagnostics {
  double t;
  double i_t;
  double mean_gamma;
  double sup_gamma;
  double min_gamma;
  double bkm_partial;
} BlSpectralDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *bl_last_error_message(void);

/**
 * Parses `gamma0` and `rho0` (expressions in `x`, `y`) on a quadrature base
 * grid of `grid_n` points per axis.
 *
 * # Safety
 * `gamma0` and `rho0` must be null or NUL-terminated strings; `out` must be
 * null or writable.
 */
enum BlStatus bl_data_new(const char *gamma0, const char *rho0, size_t grid_n, struct BlData **out);

/**
 * # Safety
 * `data` must be null or come from [`bl_data_new`] and not be freed yet.
 */
void bl_data_free(struct BlData *data);

/**
 * Sets the relative tolerance used by the ODE and the quadrature.
 *
 * # Safety
 * `data` must be a live handle.
 */
enum BlStatus bl_data_set_tol_rel(struct BlData *data, double tol_rel);

/**
 * Minimum `m₀` of `γ₀` and the critical time `τ* = −1/m₀`.
 *
 * # Safety
 * `data` must be a live handle; outputs must be null or writable.
 */
enum BlStatus bl_data_minimum(const struct BlData *data,
                              double *out_m0,
                              double *out_tau_star,
                              size_t *out_count);

/**
 * Undamped Euler blowup time `T^E` with its error estimate.
 *
 * # Safety
 * `data` must be a live handle; `out_te` writable, `out_err` null or writable.
 */
enum BlStatus bl_euler_blowup_time(const struct BlData *data, double *out_te, double *out_err);

/**
 * Damped Euler regime at `alpha`.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum BlStatus bl_euler_classify(const struct BlData *data,
                                double alpha,
                                struct BlRegimeReport *out);

/**
 * Boussinesq blowup detection along characteristics, watching the minima
 * of `γ₀` and `n_generic` labels drawn from `seed`.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum BlStatus bl_detect_blowup(const struct BlData *data,
                               double alpha,
                               uint64_t seed,
                               size_t n_generic,
                               struct BlBlowupEstimate *out);

/**
 * `−ln(1 − 2α)/α` for `0 ≤ α < ½`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_part2_blowup_time_formula(double alpha, double *out);

/**
 * `μ₁(t) = 4/(2 − t)²` for `0 ≤ t < 2`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_part2_mu1_undamped(double t, double *out);

/**
 * Divergence time of `μ₁` from the reduced ODE system.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_part2_divergence_time(double alpha, double *out);

/**
 * Spectral state on an `n × n` grid with tracers at `labels_xy`
 * (`n_labels` pairs `x, y`).
 *
 * # Safety
 * `data` must be a live handle, `labels_xy` must point to `2·n_labels`
 * doubles (or be null with `n_labels = 0`), `out` must be writable.
 */
enum BlStatus bl_spectral_new(const struct BlData *data,
                              size_t n,
                              const double *labels_xy,
                              size_t n_labels,
                              struct BlSpectral **out);

/**
 * # Safety
 * `s` must be null or come from [`bl_spectral_new`] and not be freed yet.
 */
void bl_spectral_free(struct BlSpectral *s);

/**
 * One RK4 step of size `dt`. Fails without changing the state when `dt`
 * violates the CFL limit.
 *
 * # Safety
 * `s` must be a live handle.
 */
enum BlStatus bl_spectral_step(struct BlSpectral *s, double alpha, double dt);

/**
 * Largest stable step for the current state.
 *
 * # Safety
 * `s` must be a live handle and `out` writable.
 */
enum BlStatus bl_spectral_cfl_limit(const struct BlSpectral *s, double *out);

/**
 * # Safety
 * `s` must be a live handle and `out` writable.
 */
enum BlStatus bl_spectral_diagnostics(const struct BlSpectral *s,
                                      struct BlSpectralDiagnostics *out);

/**
 * Copies `γ` (row-major, `y` slowest) into `buf`, which must hold `n²`
 * values.
 *
 * # Safety
 * `s` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum BlStatus bl_spectral_gamma(const struct BlSpectral *s, double *buf, size_t len);

/**
 * Runs a scenario given as TOML text and returns the summary as JSON.
 * Per-alpha failures are reported inside the JSON; the status covers
 * configuration errors only. Free the result with [`bl_string_free`].
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out_json` writable.
 */
enum BlStatus bl_run_scenario(const char *toml, char **out_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void bl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOWUP_LAB_H */
