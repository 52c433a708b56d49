#ifndef PEARCEY_LAB_H
#define PEARCEY_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_INVALID_ARGUMENT = 1,
  PL_STATUS_DOMAIN = 2,
  PL_STATUS_PRECISION_LOSS = 3,
  PL_STATUS_GRID_DEGENERACY = 4,
  PL_STATUS_UNDER_RESOLUTION = 5,
  PL_STATUS_COST_GUARD = 6,
  PL_STATUS_SINGULAR = 7,
  PL_STATUS_IO = 8,
  PL_STATUS_NULL_POINTER = 9,
  PL_STATUS_BUFFER_TOO_SMALL = 10,
  PL_STATUS_PANIC = 11,
} PlStatus;

typedef enum PlBranch {
  PL_BRANCH_Q = 0,
  PL_BRANCH_P = 1,
} PlBranch;

/**
 * Model configuration plus evaluation options.
 */
typedef struct PlConfig PlConfig;

/**
 * Discretized contour.
 */
typedef struct PlGrid PlGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library from the same thread.
 */
const char *pl_last_error(void);

/**
 * Creates a configuration from `n` thresholds and `n + 1` weights.
 * Configurations with equal adjacent weights need `allow_degenerate`.
 *
 * # Safety
 * `a` must point to `n` doubles, `k` to `n + 1` doubles and `out` to
 * writable storage for one pointer.
 */
enum PlStatus pl_config_new(const double *a,
                            size_t n,
                            const double *k,
                            double tau,
                            double s,
                            bool allow_degenerate,
                            struct PlConfig **out);

/**
 * Parses a JSON configuration `{"a": [...], "k": [...], "tau": .., "s": ..}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum PlStatus pl_config_from_json(const char *json, bool allow_degenerate, struct PlConfig **out);

/**
 * Releases a configuration; NULL is ignored.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void pl_config_free(struct PlConfig *config);

/**
 * Default grid truncated for the shifts of `config`.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum PlStatus pl_grid_for_config(const struct PlConfig *config, struct PlGrid **out);

/**
 * Default grid for |τ| ≤ `tau_max` and shifts |a_i + s| ≤ `s_max`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PlStatus pl_grid_new(double tau_max, double s_max, struct PlGrid **out);

/**
 * Number of quadrature nodes, 0 for NULL.
 *
 * # Safety
 * `grid` must be NULL or a live handle.
 */
size_t pl_grid_len(const struct PlGrid *grid);

/**
 * Releases a grid; NULL is ignored.
 *
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void pl_grid_free(struct PlGrid *grid);

/**
 * Generating function F and log F by the contour route.
 *
 * # Safety
 * Handles must be live; `value` and `log_value` writable (either may be
 * NULL to skip it).
 */
enum PlStatus pl_genfun(const struct PlConfig *config,
                        const struct PlGrid *grid,
                        double *value,
                        double *log_value);

/**
 * F through the Pearcey-kernel route with `nodes_per_interval` nodes.
 *
 * # Safety
 * Handles must be live and `value` writable.
 */
enum PlStatus pl_genfun_via_kp(const struct PlConfig *config,
                               const struct PlGrid *grid,
                               size_t nodes_per_interval,
                               double *value);

/**
 * Residue data: δ, and p, q as interleaved (re, im) pairs.
 *
 * `p` and `q` must each hold `2 * n` doubles where `n` is the number of
 * thresholds; `capacity` is their length in doubles.
 *
 * # Safety
 * Handles must be live; `delta` writable; `p`, `q` writable for
 * `capacity` doubles.
 */
enum PlStatus pl_gamma1(const struct PlConfig *config,
                        const struct PlGrid *grid,
                        double *delta,
                        double *p,
                        double *q,
                        size_t capacity);

/**
 * Q or P and its s-derivatives up to `max_order` (≤ 3) at (s, τ);
 * `values` receives `max_order + 1` doubles.
 *
 * # Safety
 * `grid` must be live and `values` writable for `capacity` doubles.
 */
enum PlStatus pl_pearcey(enum PlBranch branch,
                         double s,
                         double tau,
                         const struct PlGrid *grid,
                         size_t max_order,
                         double *values,
                         size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEARCEY_LAB_H */
