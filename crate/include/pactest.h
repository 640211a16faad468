/* C interface to the pactest library.  Generated by cbindgen from the pactest-ffi crate; do not edit by hand. */

#ifndef PACTEST_H
#define PACTEST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.  Anything other than `Ok` leaves a message in
 * `pac_last_error`.
 */
typedef enum {
  PAC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PAC_STATUS_NULL_POINTER = 1,
  /**
   * An argument failed validation; the message names it.
   */
  PAC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read, written, or parsed.
   */
  PAC_STATUS_IO = 3,
  /**
   * Evaluation, sampling, or calibration failed numerically.
   */
  PAC_STATUS_NUMERIC = 4,
} PacStatus;

/**
 * Preference class for parameter sampling.
 */
typedef enum {
  PAC_CLASS_UNRESTRICTED = 0,
  PAC_CLASS_HOMOTHETIC = 1,
  /**
   * Requires a first group; cross-group price coefficients are zero.
   */
  PAC_CLASS_WEAKLY_SEPARABLE = 2,
  /**
   * Requires a first group; additionally forces income effects to zero.
   */
  PAC_CLASS_HOMOTHETIC_WEAKLY_SEPARABLE = 3,
} PacClass;

/**
 * Restriction family to test against.
 */
typedef enum {
  /**
   * Scaled second income derivatives vanish.
   */
  PAC_KIND_HOMOTHETIC = 0,
  /**
   * Cross-group Slutsky ratio equals the income-derivative ratio.
   * Requires a first group.
   */
  PAC_KIND_WEAK_SEPARABLE = 1,
  /**
   * Cross-group share-form Slutsky terms vanish.  Requires a first group.
   */
  PAC_KIND_WEAK_SEPARABLE_HOMOTHETIC = 2,
  /**
   * Marshallian cross effect `dx_i/dp_j` is negative.  Requires a pair.
   */
  PAC_KIND_GROSS_COMPLEMENTS = 3,
  /**
   * Slutsky cross effect `S_ij` is negative.  Requires a pair.
   */
  PAC_KIND_NET_COMPLEMENTS = 4,
  /**
   * Marshallian cross effect is positive.  Requires a pair.
   */
  PAC_KIND_GROSS_SUBSTITUTES = 5,
  /**
   * Slutsky cross effect is positive.  Requires a pair.
   */
  PAC_KIND_NET_SUBSTITUTES = 6,
} PacKind;

/**
 * Per-iteration decision of the test engine.
 */
typedef enum {
  PAC_DECISION_CONTINUE = 0,
  PAC_DECISION_REJECT = 1,
  /**
   * A dataset subject ran out of observations for the prescribed sample.
   */
  PAC_DECISION_DATA_EXHAUSTED = 2,
} PacDecision;

/**
 * A labeled sequence of budget observations.
 */
typedef struct PacDataset PacDataset;

/**
 * Demand-system parameters.
 */
typedef struct PacParams PacParams;

/**
 * Record of one test run.
 */
typedef struct PacReport PacReport;

/**
 * Test schedule overrides.  A zero field keeps the library default, so a
 * zero-initialized struct runs the standard schedule: `eps` and `delta`
 * start at (1.0, 0.05) and shrink by 3 per iteration over at most 8
 * iterations, the calibration draws 2500 pairs over a 200-point grid, and
 * dataset subjects take income and the price box from the data.
 */
typedef struct {
  double eps0;
  double delta0;
  /**
   * Factor both tolerances shrink by per iteration.
   */
  double decay;
  size_t max_iterations;
  /**
   * Constant `C` of the sample-size rule.
   */
  double scale_c;
  /**
   * Upper bound on evaluation points drawn per iteration.
   */
  size_t point_cap;
  /**
   * Calibration pairs drawn when no gamma table is supplied.
   */
  size_t pairs;
  /**
   * Evaluation grid size of the calibration distance.
   */
  size_t grid_points;
  /**
   * Calibration income; dataset subjects default to the data's mean.
   */
  double income;
  /**
   * Calibration price box; dataset subjects default to the data's range.
   */
  double price_lo;
  double price_hi;
  /**
   * Seed of the run; 0 uses the default seed 1.
   */
  uint64_t seed;
  /**
   * Let a ratio-form request fall back to the share form.
   */
  bool assume_homothetic;
} PacSchedule;

/**
 * Restriction request: the kind plus whichever arguments it needs.
 * Zero-initialize and fill only the relevant fields.
 */
typedef struct {
  PacKind kind;
  /**
   * 0-based goods of the first group; weak-separability kinds only.
   */
  const size_t *first_group;
  size_t first_len;
  /**
   * 0-based goods of the tested cross effect; sign kinds only.
   */
  size_t pair_i;
  size_t pair_j;
} PacRestriction;

/**
 * One row of a report's iteration trace.  `norm` and `statistic` are NaN
 * on a data-exhausted row.
 */
typedef struct {
  size_t iteration;
  double eps;
  double delta;
  uint64_t n_required;
  size_t points_used;
  size_t points_skipped;
  double norm;
  double statistic;
  PacDecision decision;
} PacIterationRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pac_version(void);

/**
 * Message of the most recent failure on this thread, empty if none.  The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *pac_last_error(void);

/**
 * Builds demand parameters from `alpha` and `beta` (length `goods`) and a
 * row-major `goods * goods` price-coefficient block, validating the adding-
 * up, homogeneity, and symmetry constraints.
 *
 * # Safety
 * `alpha`, `beta`, and `gamma` must point to buffers of the stated lengths;
 * `out` must be a valid pointer.
 */
PacStatus pac_params_new(size_t goods,
                         const double *alpha,
                         const double *beta,
                         const double *gamma,
                         PacParams **out);

/**
 * Draws random parameters from the given class.  `first_group` and
 * `first_len` describe the first group for the separable classes and are
 * ignored otherwise.  Equal seeds give equal draws.
 *
 * # Safety
 * `first_group` must point to `first_len` indices when the class requires a
 * group; `out` must be a valid pointer.
 */
PacStatus pac_params_sample(size_t goods,
                            PacClass class_,
                            const size_t *first_group,
                            size_t first_len,
                            uint64_t seed,
                            PacParams **out);

/**
 * Number of goods, 0 for a null handle.
 *
 * # Safety
 * `params` must be a live handle or null.
 */
size_t pac_params_goods(const PacParams *params);

/**
 * Whether all income-effect coefficients are zero.
 *
 * # Safety
 * `params` must be a live handle or null (null reads as false).
 */
bool pac_params_is_homothetic(const PacParams *params);

/**
 * Copies parameters out.  Each destination may be null to skip it; `alpha`
 * and `beta` receive `goods` values, `gamma` a row-major `goods * goods`
 * block.
 *
 * # Safety
 * Non-null destinations must have the stated capacity.
 */
PacStatus pac_params_read(const PacParams *params, double *alpha, double *beta, double *gamma);

/**
 * Releases a parameter handle; null is ignored.
 *
 * # Safety
 * `params` must be a handle from this library, not yet freed, or null.
 */
void pac_params_free(PacParams *params);

/**
 * Marshallian demand at a budget: writes `goods` quantities to `out`.
 *
 * # Safety
 * `prices` and `out` must hold `goods` values; `params` must be live.
 */
PacStatus pac_demand(const PacParams *params, const double *prices, double income, double *out);

/**
 * Budget shares at a budget: writes `goods` shares to `out`.
 *
 * # Safety
 * `prices` and `out` must hold `goods` values; `params` must be live.
 */
PacStatus pac_shares(const PacParams *params, const double *prices, double income, double *out);

/**
 * Translog price index at a price vector.
 *
 * # Safety
 * `prices` must hold `goods` values; `out` must be valid.
 */
PacStatus pac_price_index(const PacParams *params, const double *prices, double *out);

/**
 * Income derivative of demand: writes `goods` values to `out`.
 *
 * # Safety
 * `prices` and `out` must hold `goods` values; `params` must be live.
 */
PacStatus pac_income_derivative(const PacParams *params,
                                const double *prices,
                                double income,
                                double *out);

/**
 * Slutsky substitution matrix at a budget, written row-major to `out`
 * (`goods * goods` values).
 *
 * # Safety
 * `prices` must hold `goods` values and `out` `goods * goods`; `params`
 * must be live.
 */
PacStatus pac_slutsky(const PacParams *params, const double *prices, double income, double *out);

/**
 * Sample size prescribed by the learnability rule at accuracy `eps`,
 * confidence `delta`, income-Lipschitz constant `lipschitz`, dimension
 * `goods`, and scale constant `c`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
PacStatus pac_sample_size(double eps,
                          double delta,
                          double lipschitz,
                          size_t goods,
                          double c,
                          uint64_t *out);

/**
 * Simulates `n` observations from the parameters: prices uniform on
 * `[price_lo, price_hi]`, incomes log-uniform within a factor of two of
 * `income`, quantities perturbed by uniform noise of the given variance
 * (0 disables noise).  Equal seeds give equal datasets.
 *
 * # Safety
 * `label` must be a NUL-terminated string; `out` must be valid; `params`
 * must be live.
 */
PacStatus pac_dataset_generate(const PacParams *params,
                               size_t n,
                               double price_lo,
                               double price_hi,
                               double income,
                               double noise_variance,
                               const char *label,
                               uint64_t seed,
                               PacDataset **out);

/**
 * Reads a dataset from CSV (`t,p_1..p_K,x_1..x_K,income`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
PacStatus pac_dataset_read_csv(const char *path, PacDataset **out);

/**
 * Writes a dataset to CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `dataset` must be live.
 */
PacStatus pac_dataset_write_csv(const PacDataset *dataset, const char *path);

/**
 * Number of observations, 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t pac_dataset_len(const PacDataset *dataset);

/**
 * Number of goods, 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t pac_dataset_goods(const PacDataset *dataset);

/**
 * Copies observation `t` out.  `prices` and `quantities` may be null to
 * skip them and otherwise receive `goods` values; `income` may be null.
 *
 * # Safety
 * Non-null destinations must have the stated capacity; `dataset` must be
 * live.
 */
PacStatus pac_dataset_observation(const PacDataset *dataset,
                                  size_t t,
                                  double *prices,
                                  double *quantities,
                                  double *income);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `dataset` must be a handle from this library, not yet freed, or null.
 */
void pac_dataset_free(PacDataset *dataset);

/**
 * Fills a schedule with the library defaults (every field zero except
 * `eps0 = 1.0`, `delta0 = 0.05`, `decay = 3.0`, `max_iterations = 8`,
 * `scale_c = 20.0`, `point_cap = 100000`, `pairs = 2500`,
 * `grid_points = 200`, `seed = 1`).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
PacStatus pac_schedule_default(PacSchedule *out);

/**
 * Runs the iterative PAC test of a dataset against a restriction.
 * `schedule` may be null for the defaults; `gamma_table_path` may be null
 * to calibrate in place (required non-null for sign kinds).  A rejection
 * is a regular `Ok` outcome, reported through the handle.
 *
 * # Safety
 * `data` and `restriction` must be live; `out` must be valid;
 * `gamma_table_path` must be NUL-terminated when non-null.
 */
PacStatus pac_test_dataset(const PacDataset *data,
                           const PacRestriction *restriction,
                           const PacSchedule *schedule,
                           const char *gamma_table_path,
                           PacReport **out);

/**
 * Runs the iterative PAC test of a closed-form demand system against a
 * restriction, drawing evaluation points from the schedule's price box.
 * Arguments follow [`pac_test_dataset`].
 *
 * # Safety
 * `params` and `restriction` must be live; `label` must be NUL-terminated;
 * `out` must be valid; `gamma_table_path` must be NUL-terminated when
 * non-null.
 */
PacStatus pac_test_params(const PacParams *params,
                          const char *label,
                          const PacRestriction *restriction,
                          const PacSchedule *schedule,
                          const char *gamma_table_path,
                          PacReport **out);

/**
 * Whether the run rejected the restriction.
 *
 * # Safety
 * `report` must be a live handle or null (null reads as false).
 */
bool pac_report_rejected(const PacReport *report);

/**
 * 1-based iteration the run rejected at, 0 when it did not reject.
 *
 * # Safety
 * `report` must be a live handle or null.
 */
size_t pac_report_rejected_iteration(const PacReport *report);

/**
 * Number of iteration rows in the trace, 0 for a null handle.
 *
 * # Safety
 * `report` must be a live handle or null.
 */
size_t pac_report_len(const PacReport *report);

/**
 * Copies iteration row `idx` (0-based) out.
 *
 * # Safety
 * `report` must be live; `out` must be a valid pointer.
 */
PacStatus pac_report_row(const PacReport *report, size_t idx, PacIterationRow *out);

/**
 * Number of warnings attached to the run.
 *
 * # Safety
 * `report` must be a live handle or null.
 */
size_t pac_report_warning_count(const PacReport *report);

/**
 * Copies warning `idx` into `buf` as a NUL-terminated string, truncating
 * to `cap` bytes.  Returns the full length including the NUL, or 0 when
 * `idx` is out of range.  `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must have capacity `cap` when non-null; `report` must be live or
 * null.
 */
size_t pac_report_warning(const PacReport *report, size_t idx, char *buf, size_t cap);

/**
 * Writes the full report (config header, iteration trace, verdict) to CSV.
 *
 * # Safety
 * `path` must be NUL-terminated; `report` must be live.
 */
PacStatus pac_report_write_csv(const PacReport *report, const char *path);

/**
 * Releases a report handle; null is ignored.
 *
 * # Safety
 * `report` must be a handle from this library, not yet freed, or null.
 */
void pac_report_free(PacReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACTEST_H */
