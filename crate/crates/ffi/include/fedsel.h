#ifndef FEDSEL_H
#define FEDSEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedselStatus {
  FEDSEL_STATUS_OK = 0,
  FEDSEL_STATUS_NULL_POINTER = 1,
  FEDSEL_STATUS_INVALID_ARGUMENT = 2,
  FEDSEL_STATUS_INVALID_CONFIG = 3,
  FEDSEL_STATUS_IO = 4,
  FEDSEL_STATUS_TOO_LARGE = 5,
  /**
   * Output buffer too small; the required length was written.
   */
  FEDSEL_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * The simulation has already run all its rounds.
   */
  FEDSEL_STATUS_FINISHED = 7,
  FEDSEL_STATUS_NUMERIC = 8,
  FEDSEL_STATUS_PANIC = 9,
} FedselStatus;

/**
 * A running simulation.
 */
typedef struct FedselSimulation FedselSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fedsel_last_error(void);

/**
 * Builds a simulation from a TOML configuration (empty string for defaults).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FedselStatus fedsel_simulation_new(const char *config_toml, struct FedselSimulation **out);

/**
 * Releases a simulation. Null is accepted.
 *
 * # Safety
 * `sim` must come from [`fedsel_simulation_new`] and not be used afterwards.
 */
void fedsel_simulation_free(struct FedselSimulation *sim);

/**
 * Runs one round; `out_accuracy` (optional) receives the global accuracy.
 * Returns `FINISHED` once all configured rounds have run.
 *
 * # Safety
 * `sim` must be a live handle; `out_accuracy` may be null.
 */
enum FedselStatus fedsel_simulation_step(struct FedselSimulation *sim, double *out_accuracy);

/**
 * Runs all remaining rounds.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum FedselStatus fedsel_simulation_run(struct FedselSimulation *sim);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum FedselStatus fedsel_simulation_rounds_completed(const struct FedselSimulation *sim,
                                                     size_t *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum FedselStatus fedsel_simulation_num_clients(const struct FedselSimulation *sim, size_t *out);

/**
 * Ids selected in the most recent round (empty before the first round).
 *
 * # Safety
 * `out` must hold `capacity` elements; `out_len` must be valid.
 */
enum FedselStatus fedsel_simulation_last_selected(const struct FedselSimulation *sim,
                                                  size_t *out,
                                                  size_t capacity,
                                                  size_t *out_len);

/**
 * Current reputation of every client.
 *
 * # Safety
 * `out` must hold `capacity` elements; `out_len` must be valid.
 */
enum FedselStatus fedsel_simulation_reputation(const struct FedselSimulation *sim,
                                               double *out,
                                               size_t capacity,
                                               size_t *out_len);

/**
 * Writes the records so far as CSV.
 *
 * # Safety
 * `sim` must be a live handle and `path` a NUL-terminated string.
 */
enum FedselStatus fedsel_simulation_write_csv(const struct FedselSimulation *sim, const char *path);

/**
 * Exact budgeted selection. `out_selected[i]` is set to 1 for chosen items
 * and 0 otherwise; objective and cost pointers may be null.
 *
 * # Safety
 * `weights`, `bids` and `out_selected` must each hold `n` elements.
 */
enum FedselStatus fedsel_solve_selection(const double *weights,
                                         const double *bids,
                                         size_t n,
                                         double budget,
                                         uint8_t *out_selected,
                                         double *out_objective,
                                         double *out_cost);

/**
 * Exact Shapley values of a game given as `2^players` coalition values
 * indexed by bitmask.
 *
 * # Safety
 * `table` must hold `2^players` elements and `out_values` `players`.
 */
enum FedselStatus fedsel_exact_shapley(const double *table, size_t players, double *out_values);

/**
 * Prospect-style reputation score around `threshold`. A nonzero
 * `as_printed` selects the positive loss-branch sign.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FedselStatus fedsel_reputation_score(double reputation,
                                          double threshold,
                                          double alpha,
                                          double beta,
                                          double gamma,
                                          uint8_t as_printed,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSEL_H */
