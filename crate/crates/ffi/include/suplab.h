#ifndef SUPLAB_H
#define SUPLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SuplabStatus {
  SUPLAB_STATUS_OK = 0,
  SUPLAB_STATUS_NULL_POINTER = 1,
  SUPLAB_STATUS_INVALID_ARGUMENT = 2,
  SUPLAB_STATUS_PRECONDITION = 3,
  SUPLAB_STATUS_RUNTIME = 4,
  SUPLAB_STATUS_PANIC = 5,
} SuplabStatus;

/**
 * Opaque finite atomic measure.
 */
typedef struct SuplabMeasure SuplabMeasure;

/**
 * Opaque offspring law.
 */
typedef struct SuplabOffspringLaw SuplabOffspringLaw;

/**
 * Opaque coupled trajectory.
 */
typedef struct SuplabTrajectory SuplabTrajectory;

/**
 * Simulation parameters.
 */
typedef struct SuplabEngineParams {
  double beta;
  size_t d;
  /**
   * Particles per unit mass.
   */
  uint64_t mass_scale;
  /**
   * Truncation level K; zero, negative or infinite means none.
   */
  double truncation;
  double horizon;
  uint64_t seed;
  /**
   * Snapshot times, or null for a single snapshot at the horizon.
   */
  const double *snapshot_times;
  size_t snapshot_count;
} SuplabEngineParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message of this thread, without the
 * terminating NUL; 0 when there is none.
 */
size_t suplab_last_error_length(void);

/**
 * Copies the last error message of this thread into `buf` (at most
 * `len - 1` bytes plus a NUL). Returns the number of bytes copied.
 *
 * # Safety
 * `buf` must be writable for `len` bytes.
 */
size_t suplab_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *suplab_version(void);

/**
 * `E exp(-lambda |X_t|)` for the CSBP started at `m`.
 */
double suplab_mass_laplace_oracle(double m, double t, double lambda, double beta);

/**
 * `P(X_t = 0)` for the CSBP started at `m`.
 */
double suplab_extinction_prob_oracle(double m, double t, double beta);

/**
 * `(beta h)^{1/beta}`.
 */
double suplab_cluster_normalizer(double h, double beta);

/**
 * Tabulates the offspring law with `cutoff` explicit probabilities.
 *
 * # Safety
 * `law` must be a valid pointer to writable storage for one handle.
 */
enum SuplabStatus suplab_offspring_law_new(double beta,
                                           size_t cutoff,
                                           struct SuplabOffspringLaw **law);

/**
 * `p_k`.
 *
 * # Safety
 * `law` must come from [`suplab_offspring_law_new`]; `value` must be writable.
 */
enum SuplabStatus suplab_offspring_law_prob(const struct SuplabOffspringLaw *law,
                                            uint64_t k,
                                            double *value);

/**
 * `P(K > k)`.
 *
 * # Safety
 * As for [`suplab_offspring_law_prob`].
 */
enum SuplabStatus suplab_offspring_law_tail(const struct SuplabOffspringLaw *law,
                                            uint64_t k,
                                            double *value);

/**
 * # Safety
 * `law` must come from [`suplab_offspring_law_new`] or be null.
 */
void suplab_offspring_law_free(struct SuplabOffspringLaw *law);

/**
 * Creates an empty measure on `R^dim`.
 *
 * # Safety
 * `measure` must be writable.
 */
enum SuplabStatus suplab_measure_new(size_t dim, struct SuplabMeasure **measure);

/**
 * Adds an atom of mass `mass` at `position` (`dim` coordinates).
 *
 * # Safety
 * `measure` must come from [`suplab_measure_new`]; `position` must hold
 * `dim` values.
 */
enum SuplabStatus suplab_measure_push(struct SuplabMeasure *measure,
                                      const double *position,
                                      double mass);

/**
 * # Safety
 * `measure` must come from [`suplab_measure_new`]; `value` must be writable.
 */
enum SuplabStatus suplab_measure_total_mass(const struct SuplabMeasure *measure, double *value);

/**
 * # Safety
 * `measure` must come from [`suplab_measure_new`] or be null.
 */
void suplab_measure_free(struct SuplabMeasure *measure);

/**
 * Simulates one coupled trajectory (replicate 0 of `params.seed`).
 *
 * # Safety
 * All pointers must be valid; `trajectory` must be writable.
 */
enum SuplabStatus suplab_simulate(const struct SuplabEngineParams *params,
                                  const struct SuplabMeasure *initial,
                                  struct SuplabTrajectory **trajectory);

/**
 * Number of snapshots in a trajectory.
 *
 * # Safety
 * `trajectory` must come from [`suplab_simulate`]; `count` must be writable.
 */
enum SuplabStatus suplab_trajectory_snapshot_count(const struct SuplabTrajectory *trajectory,
                                                   size_t *count);

/**
 * Time, full mass and truncated mass of snapshot `index`.
 *
 * # Safety
 * `trajectory` must come from [`suplab_simulate`]; outputs must be writable.
 */
enum SuplabStatus suplab_trajectory_snapshot(const struct SuplabTrajectory *trajectory,
                                             size_t index,
                                             double *time,
                                             double *full_mass,
                                             double *kept_mass);

/**
 * First truncation time (infinity if none occurred).
 *
 * # Safety
 * `trajectory` must come from [`suplab_simulate`]; `tau` must be writable.
 */
enum SuplabStatus suplab_trajectory_tau_k(const struct SuplabTrajectory *trajectory, double *tau);

/**
 * # Safety
 * `trajectory` must come from [`suplab_simulate`] or be null.
 */
void suplab_trajectory_free(struct SuplabTrajectory *trajectory);

/**
 * Monte-Carlo `P(xi_t B(center, eps) > 0)` of the full process.
 *
 * # Safety
 * All pointers must be valid; `center` must hold `params.d` values.
 */
enum SuplabStatus suplab_hit_probability(const struct SuplabEngineParams *params,
                                         const struct SuplabMeasure *initial,
                                         double t,
                                         const double *center,
                                         double eps,
                                         uint64_t reps,
                                         double *value,
                                         double *stderr);

/**
 * `c_{beta,d}` from the semilinear PDE with the default ladder and probes.
 *
 * # Safety
 * `value` and `error_bar` must be writable.
 */
enum SuplabStatus suplab_pde_constant(double beta, size_t d, double *value, double *error_bar);

/**
 * Runs acceptance criteria and returns the report as JSON. `tier` is
 * `"fast"` or `"full"`; `ids` selects criteria (all when `id_count` is 0).
 * The string must be released with [`suplab_string_free`].
 *
 * # Safety
 * `tier` must be a NUL-terminated string, `ids` must hold `id_count`
 * values, and `json` must be writable.
 */
enum SuplabStatus suplab_verify_json(const char *tier,
                                     uint64_t seed,
                                     const uint8_t *ids,
                                     size_t id_count,
                                     char **json);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library or be null.
 */
void suplab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPLAB_H */
