#ifndef KOLMO_H
#define KOLMO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum KolmoStatus {
  KOLMO_STATUS_OK = 0,
  KOLMO_STATUS_NULL_POINTER = 1,
  KOLMO_STATUS_INVALID_ARGUMENT = 2,
  KOLMO_STATUS_NUMERICAL = 3,
  KOLMO_STATUS_FORMAT = 4,
  KOLMO_STATUS_IO = 5,
  KOLMO_STATUS_PANIC = 6,
} KolmoStatus;

/**
 * Lipschitz graph domain.
 */
typedef struct KolmoDomain KolmoDomain;

/**
 * Coefficient field `A(X)`.
 */
typedef struct KolmoField KolmoField;

/**
 * Grid solution with its solve report.
 */
typedef struct KolmoGrid KolmoGrid;

/**
 * Monte Carlo boundary-measure histogram.
 */
typedef struct KolmoHistogram KolmoHistogram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *kolmo_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kolmo_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void kolmo_string_free(char *s);

/**
 * Group law `p o q`; `out` receives `2m + 1` values.
 *
 * # Safety
 * `p`, `q` and `out` must point to `2m + 1` doubles.
 */
enum KolmoStatus kolmo_compose(size_t m, const double *p, const double *q, double *out);

/**
 * Group inverse `p^{-1}`.
 *
 * # Safety
 * `p` and `out` must point to `2m + 1` doubles.
 */
enum KolmoStatus kolmo_inverse(size_t m, const double *p, double *out);

/**
 * Dilation `delta_r p = (r X, r^3 Y, r^2 t)`.
 *
 * # Safety
 * `p` and `out` must point to `2m + 1` doubles.
 */
enum KolmoStatus kolmo_dilate(size_t m, double r, const double *p, double *out);

/**
 * Symmetric quasi-distance `d(p, q)`.
 *
 * # Safety
 * `p` and `q` must point to `2m + 1` doubles and `out` to one double.
 */
enum KolmoStatus kolmo_quasi_distance(size_t m, const double *p, const double *q, double *out);

/**
 * Half-space `x_m > 0`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum KolmoStatus kolmo_domain_flat(size_t m, struct KolmoDomain **out);

/**
 * Domain from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum KolmoStatus kolmo_domain_from_json(const char *json, struct KolmoDomain **out);

/**
 * Dimension `m` of a domain, or 0 for a null handle.
 *
 * # Safety
 * `dom` must be null or a live domain handle.
 */
size_t kolmo_domain_dim(const struct KolmoDomain *dom);

/**
 * Whether `x` (length `m`) lies strictly above the graph; writes 1 or 0.
 *
 * # Safety
 * `dom` must be a live handle, `x` must point to `m` doubles and `out` to one int.
 */
enum KolmoStatus kolmo_domain_contains(const struct KolmoDomain *dom,
                                       const double *x,
                                       int32_t *out);

/**
 * # Safety
 * `dom` must be null or a handle from this library, freed once.
 */
void kolmo_domain_free(struct KolmoDomain *dom);

/**
 * Identity coefficient field.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum KolmoStatus kolmo_field_identity(size_t m, struct KolmoField **out);

/**
 * Coefficient field from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum KolmoStatus kolmo_field_from_json(const char *json, struct KolmoField **out);

/**
 * Effective tensor on an `n`-point cell grid; `out` receives `m * m` values row-major.
 *
 * # Safety
 * `field` must be a live handle and `out` must point to `m * m` doubles.
 */
enum KolmoStatus kolmo_effective_matrix(const struct KolmoField *field, size_t n, double *out);

/**
 * # Safety
 * `field` must be null or a handle from this library, freed once.
 */
void kolmo_field_free(struct KolmoField *field);

/**
 * Runs a Monte Carlo measure experiment described by a `measure` config (JSON).
 * The config's `seed`, or 0, seeds the run.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum KolmoStatus kolmo_measure_run(const char *json, struct KolmoHistogram **out);

/**
 * Number of histogram cells, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live histogram handle.
 */
size_t kolmo_histogram_len(const struct KolmoHistogram *h);

/**
 * Empirical mass of cell `i` and its standard error.
 *
 * # Safety
 * `h` must be a live handle; `mass` and `stderr` must be valid (stderr may be null).
 */
enum KolmoStatus kolmo_histogram_mass(const struct KolmoHistogram *h,
                                      size_t i,
                                      double *mass,
                                      double *stderr);

/**
 * Fraction of censored paths.
 *
 * # Safety
 * `h` must be a live handle and `out` valid.
 */
enum KolmoStatus kolmo_histogram_censored(const struct KolmoHistogram *h, double *out);

/**
 * JSON report of a histogram; release with [`kolmo_string_free`].
 *
 * # Safety
 * `h` must be a live handle and `out` valid.
 */
enum KolmoStatus kolmo_histogram_to_json(const struct KolmoHistogram *h, char **out);

/**
 * # Safety
 * `h` must be null or a handle from this library, freed once.
 */
void kolmo_histogram_free(struct KolmoHistogram *h);

/**
 * Runs a grid solve described by a `solve` config (JSON).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum KolmoStatus kolmo_solve_run(const char *json, struct KolmoGrid **out);

/**
 * Number of grid axes, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live grid handle.
 */
size_t kolmo_grid_dims(const struct KolmoGrid *g);

/**
 * Multilinear interpolation at `coords` (one value per axis).
 *
 * # Safety
 * `g` must be a live handle, `coords` must point to `kolmo_grid_dims(g)` doubles and `out` be valid.
 */
enum KolmoStatus kolmo_grid_evaluate(const struct KolmoGrid *g,
                                     const double *coords,
                                     double *out);

/**
 * Largest discrete maximum-principle violation of the solve.
 *
 * # Safety
 * `g` must be a live handle and `out` valid.
 */
enum KolmoStatus kolmo_grid_max_principle_violation(const struct KolmoGrid *g, double *out);

/**
 * # Safety
 * `g` must be null or a handle from this library, freed once.
 */
void kolmo_grid_free(struct KolmoGrid *g);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOLMO_H */
