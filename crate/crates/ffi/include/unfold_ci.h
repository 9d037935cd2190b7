#ifndef UNFOLD_CI_H
#define UNFOLD_CI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UcStatus {
  UC_STATUS_OK = 0,
  UC_STATUS_NULL_POINTER = 1,
  UC_STATUS_INVALID_ARGUMENT = 2,
  UC_STATUS_DIMENSION = 3,
  UC_STATUS_CONFIG = 4,
  UC_STATUS_NUMERICAL = 5,
  UC_STATUS_IO = 6,
  UC_STATUS_PANIC = 7,
} UcStatus;

/**
 * Built-in shape constraint families.
 */
typedef enum UcConstraintSetup {
  UC_CONSTRAINT_SETUP_NONE = 0,
  UC_CONSTRAINT_SETUP_N = 1,
  UC_CONSTRAINT_SETUP_ND = 2,
  UC_CONSTRAINT_SETUP_NDC = 3,
} UcConstraintSetup;

/**
 * Interval methods available through [`uc_interval`].
 */
typedef enum UcMethod {
  UC_METHOD_OSB = 0,
  UC_METHOD_OSB_DUAL = 1,
  UC_METHOD_LS = 2,
  UC_METHOD_SSB = 3,
} UcMethod;

/**
 * Polyhedral constraint set `A λ ≤ b`.
 */
typedef struct UcConstraints UcConstraints;

/**
 * Whitened linear Gaussian model.
 */
typedef struct UcModel UcModel;

/**
 * Data-independent PO decision rule.
 */
typedef struct UcRule UcRule;

/**
 * An interval with its slack diagnostic (`NaN` when not applicable).
 */
typedef struct UcInterval {
  double lower;
  double upper;
  double slack_s2;
  bool pathological;
} UcInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *uc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uc_version(void);

/**
 * Builds a model from `K` (`m × n`), counts `y` and optional per-bin
 * variances. With `variances` null the data are taken as already whitened.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum UcStatus uc_model_new(const double *k,
                           size_t m,
                           size_t n,
                           const double *y,
                           const double *variances,
                           struct UcModel **out);

/**
 * # Safety
 * `model` must come from [`uc_model_new`] and not be used afterwards.
 */
void uc_model_free(struct UcModel *model);

/**
 * One of the built-in constraint families on `n` bins (uniform spacing).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UcStatus uc_constraints_setup(enum UcConstraintSetup setup,
                                   size_t n,
                                   struct UcConstraints **out);

/**
 * Custom constraints `A λ ≤ b` with `A` of shape `rows × n`.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum UcStatus uc_constraints_new(const double *a,
                                 size_t rows,
                                 size_t n,
                                 const double *b,
                                 struct UcConstraints **out);

/**
 * # Safety
 * `c` must come from a `uc_constraints_*` constructor.
 */
void uc_constraints_free(struct UcConstraints *c);

/**
 * Interval for `hᵀλ` (`h` of length `n`). `constraints` may be null for
 * the unconstrained problem and is ignored by LS.
 *
 * # Safety
 * Handles must be live; `h` must hold `n` values.
 */
enum UcStatus uc_interval(const struct UcModel *model,
                          const struct UcConstraints *constraints,
                          enum UcMethod method,
                          const double *h,
                          size_t n,
                          double alpha,
                          struct UcInterval *out);

/**
 * Computes the PO rule for `hᵀλ` under a prior with mean `prior_mean`.
 * Only the matrix of `model` is used.
 *
 * # Safety
 * Handles must be live; `h` and `prior_mean` must hold `n` values.
 */
enum UcStatus uc_po_rule_new(const struct UcModel *model,
                             const struct UcConstraints *constraints,
                             const double *h,
                             const double *prior_mean,
                             size_t n,
                             double alpha,
                             struct UcRule **out);

/**
 * Reads a rule previously produced by [`uc_po_rule_to_json`].
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
enum UcStatus uc_po_rule_from_json(const char *json, struct UcRule **out);

/**
 * Serialises a rule; free the result with [`uc_string_free`].
 *
 * # Safety
 * `rule` must be live and `out` valid.
 */
enum UcStatus uc_po_rule_to_json(const struct UcRule *rule, char **out);

/**
 * Applies a rule to whitened data of length `m`.
 *
 * # Safety
 * `rule` must be live; `y` must hold `m` values.
 */
enum UcStatus uc_po_rule_apply(const struct UcRule *rule,
                               const double *y,
                               size_t m,
                               struct UcInterval *out);

/**
 * # Safety
 * `rule` must come from a `uc_po_rule_*` constructor.
 */
void uc_po_rule_free(struct UcRule *rule);

/**
 * # Safety
 * `s` must come from this library.
 */
void uc_string_free(char *s);

/**
 * Lower and upper bounds on the minimax expected half-width for unit noise.
 * Infinite values mean the functional is not identifiable.
 *
 * # Safety
 * Handles must be live; `h` must hold `n` values.
 */
enum UcStatus uc_minimax_bounds(const struct UcModel *model,
                                const struct UcConstraints *constraints,
                                const double *h,
                                size_t n,
                                double alpha,
                                double *lower,
                                double *upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNFOLD_CI_H */
