#ifndef ITSA_LAB_H
#define ITSA_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Number of model coefficients.
 */
#define ITSA_N_COEF 8

typedef enum ItsaStatus {
  ITSA_STATUS_OK = 0,
  ITSA_STATUS_NULL_POINTER = 1,
  ITSA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bad panel data, CSV or configuration.
   */
  ITSA_STATUS_INPUT_ERROR = 3,
  /**
   * Numerical or estimation failure.
   */
  ITSA_STATUS_ESTIMATION_ERROR = 4,
  /**
   * Prais-Winsten hit its iteration limit; the fit is still returned.
   */
  ITSA_STATUS_NOT_CONVERGED = 5,
  ITSA_STATUS_PANIC = 6,
} ItsaStatus;

/**
 * Opaque fit handle.
 */
typedef struct ItsaFit ItsaFit;

/**
 * Opaque panel handle.
 */
typedef struct ItsaPanel ItsaPanel;

typedef struct ItsaWald {
  double estimate;
  double se;
  double statistic;
  double p_value;
  double ci_low;
  double ci_high;
  size_t df;
  bool rejected;
} ItsaWald;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *itsa_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *itsa_version(void);

/**
 * Largest modulus of the AR companion matrix eigenvalues; NaN for a null
 * pointer with `k > 0`.
 */
double itsa_spectral_radius(const double *rho, size_t k);

/**
 * Builds a panel from `n` rows given column-wise. Flags are 0 or 1.
 */
enum ItsaStatus itsa_panel_from_arrays(size_t n,
                                       const int64_t *unit_id,
                                       const int64_t *t,
                                       const uint8_t *treated,
                                       const uint8_t *post,
                                       const double *y,
                                       struct ItsaPanel **out);

/**
 * Reads a panel CSV with columns `unit_id,t,treated,post,y`.
 */
enum ItsaStatus itsa_panel_from_csv(const char *path, struct ItsaPanel **out);

/**
 * Generates a panel from a JSON scenario config (same schema as the
 * `dgp` command).
 */
enum ItsaStatus itsa_panel_generate(const char *config_json, struct ItsaPanel **out);

size_t itsa_panel_len(const struct ItsaPanel *panel);

size_t itsa_panel_n_units(const struct ItsaPanel *panel);

/**
 * First period flagged as post-intervention.
 */
enum ItsaStatus itsa_panel_intervention(const struct ItsaPanel *panel, int64_t *out);

/**
 * Copies the outcome column into `out` (capacity `len`, at least the
 * panel length).
 */
enum ItsaStatus itsa_panel_y(const struct ItsaPanel *panel, double *out, size_t len);

void itsa_panel_free(struct ItsaPanel *panel);

/**
 * OLS with Newey-West covariance. A negative `lag` selects the automatic
 * bandwidth.
 */
enum ItsaStatus itsa_fit_ols_nw(const struct ItsaPanel *panel,
                                int64_t intervention,
                                int64_t lag,
                                bool small_sample_adjust,
                                struct ItsaFit **out);

/**
 * Iterated Prais-Winsten for AR(`k`) errors. Non-positive `tol` or zero
 * `max_iter` select the defaults. On `NotConverged` the last iterate is
 * still written to `out`.
 */
enum ItsaStatus itsa_fit_pw(const struct ItsaPanel *panel,
                            int64_t intervention,
                            size_t k,
                            double tol,
                            size_t max_iter,
                            struct ItsaFit **out);

/**
 * Writes the 8 coefficients.
 */
enum ItsaStatus itsa_fit_beta(const struct ItsaFit *fit, double *out);

/**
 * Writes the 8 standard errors.
 */
enum ItsaStatus itsa_fit_se(const struct ItsaFit *fit, double *out);

/**
 * Writes the 8x8 covariance in row-major order (64 values).
 */
enum ItsaStatus itsa_fit_cov(const struct ItsaFit *fit, double *out);

size_t itsa_fit_n_obs(const struct ItsaFit *fit);

size_t itsa_fit_df(const struct ItsaFit *fit);

/**
 * Newey-West lag used, or -1 for a Prais-Winsten fit.
 */
int64_t itsa_fit_lag(const struct ItsaFit *fit);

/**
 * Prais-Winsten iterations, or 0 for an OLS fit.
 */
size_t itsa_fit_iterations(const struct ItsaFit *fit);

/**
 * AR order of a Prais-Winsten fit; 0 for OLS.
 */
size_t itsa_fit_rho_order(const struct ItsaFit *fit);

/**
 * Writes the AR estimates and, if `se` is not NULL, their standard
 * errors. Both buffers need `itsa_fit_rho_order` slots.
 */
enum ItsaStatus itsa_fit_rho(const struct ItsaFit *fit, double *rho, double *se, size_t len);

/**
 * t test of `beta[index] = null_value` at level `alpha`.
 */
enum ItsaStatus itsa_fit_wald(const struct ItsaFit *fit,
                              size_t index,
                              double null_value,
                              double alpha,
                              struct ItsaWald *out);

/**
 * The fit as a JSON string; release it with `itsa_string_free`. NULL on
 * failure.
 */
char *itsa_fit_to_json(const struct ItsaFit *fit);

void itsa_string_free(char *s);

void itsa_fit_free(struct ItsaFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ITSA_LAB_H */
