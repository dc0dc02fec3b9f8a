#ifndef NLWTORI_H
#define NLWTORI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the positive ones match the CLI exit codes.
 */
typedef enum NlwStatus {
  NLW_STATUS_OK = 0,
  NLW_STATUS_FAILURE = 1,
  NLW_STATUS_INADMISSIBLE = 2,
  NLW_STATUS_NO_CONVERGENCE = 3,
  NLW_STATUS_CONFIG = 64,
  NLW_STATUS_NULL_POINTER = -1,
  NLW_STATUS_BUFFER_TOO_SMALL = -2,
  NLW_STATUS_PANIC = -3,
} NlwStatus;

typedef struct NlwConfig NlwConfig;

typedef struct NlwSolution NlwSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses configuration text (`key = value` lines).
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum NlwStatus nlw_config_parse(const char *text, struct NlwConfig **out);

/**
 * # Safety
 * `cfg` must come from `nlw_config_parse` and not be used afterwards. Null is ignored.
 */
void nlw_config_free(struct NlwConfig *cfg);

/**
 * Screens the frequency and runs the coupled solve.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum NlwStatus nlw_solve(const struct NlwConfig *cfg, struct NlwSolution **out);

/**
 * # Safety
 * `sol` must come from `nlw_solve` and not be used afterwards. Null is ignored.
 */
void nlw_solution_free(struct NlwSolution *sol);

/**
 * Fixed-point and tangential residuals stored with the solution.
 *
 * # Safety
 * `sol` must be a live solution handle; `fp` and `tangential` valid pointers.
 */
enum NlwStatus nlw_solution_residual(const struct NlwSolution *sol, double *fp, double *tangential);

/**
 * Writes the d tangential frequencies into `buf` (capacity `len`); `d` receives the count.
 *
 * # Safety
 * `sol` must be a live handle, `buf` valid for `len` doubles, `d` a valid pointer.
 */
enum NlwStatus nlw_solution_omega(const struct NlwSolution *sol,
                                  double *buf,
                                  size_t len,
                                  size_t *d);

/**
 * Serializes the solution as JSON into `buf`. Call with a null `buf` to learn `needed`.
 *
 * # Safety
 * `sol` must be a live handle, `buf` null or valid for `len` bytes, `needed` null or valid.
 */
enum NlwStatus nlw_solution_json(const struct NlwSolution *sol,
                                 char *buf,
                                 size_t len,
                                 size_t *needed);

/**
 * Normal-form coefficients gbar (row-major n x n) for tangential indices `set`.
 *
 * # Safety
 * `set` valid for `n` ints and `out` for `n * n` doubles.
 */
enum NlwStatus nlw_gbar(const int32_t *set, size_t n, double m, double *out);

/**
 * Message of the last failure on this thread.
 *
 * # Safety
 * `buf` null or valid for `len` bytes, `needed` null or valid.
 */
enum NlwStatus nlw_last_error(char *buf, size_t len, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLWTORI_H */
