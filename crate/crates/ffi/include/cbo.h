#ifndef CBO_H
#define CBO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum CboStatus {
  CboStatus_Ok = 0,
  CboStatus_NullPointer = 1,
  CboStatus_InvalidUtf8 = 2,
  CboStatus_InvalidArgument = 3,
  CboStatus_BufferTooSmall = 4,
  CboStatus_Diverged = 5,
  CboStatus_Io = 6,
  CboStatus_Internal = 7,
} CboStatus;

/**
 * Opaque solver handle.
 */
typedef struct CboSolver CboSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cbo_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cbo_version(void);

/**
 * Builds a solver from TOML configuration text. Relative dataset paths
 * resolve against the working directory.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CboStatus cbo_solver_new(const char *config, struct CboSolver **out);

/**
 * Releases a solver. Null is ignored.
 *
 * # Safety
 * `solver` must come from [`cbo_solver_new`] and not be used afterwards.
 */
void cbo_solver_free(struct CboSolver *solver);

/**
 * Number of particles and dimension.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CboStatus cbo_solver_shape(const struct CboSolver *solver, size_t *n_particles, size_t *dim);

/**
 * Performs `steps` iterations.
 *
 * # Safety
 * `solver` must be a valid handle.
 */
enum CboStatus cbo_solver_advance(struct CboSolver *solver, size_t steps);

/**
 * Iterations performed so far.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CboStatus cbo_solver_iteration(const struct CboSolver *solver, size_t *out);

/**
 * Particle positions, row-major `N x d`, into `buf` of capacity `len`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum CboStatus cbo_solver_positions(const struct CboSolver *solver, double *buf, size_t len);

/**
 * Consensus point of the current ensemble, using the oracle draws of the
 * current iteration. Not charged to the ledger.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum CboStatus cbo_solver_consensus(const struct CboSolver *solver, double *buf, size_t len);

/**
 * Mean distance of the particles to their average.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CboStatus cbo_solver_stopping_metric(const struct CboSolver *solver, double *out);

/**
 * Oracle component evaluations and cost charged so far.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CboStatus cbo_solver_ledger(const struct CboSolver *solver,
                                 uint64_t *component_evals,
                                 double *cost);

/**
 * Runs a configuration to completion and returns the run record as JSON.
 * Release the string with [`cbo_string_free`].
 *
 * # Safety
 * `config` must be a NUL-terminated string and `json_out` a valid pointer.
 */
enum CboStatus cbo_run_json(const char *config, char **json_out);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void cbo_string_free(char *s);

/**
 * Contraction constant `1 - gamma + 8 xi sqrt(ln(sqrt2 N))`.
 */
double cbo_theta(double gamma, double xi, size_t n_particles);

/**
 * Rastrigin function at `x[0..dim]`; NaN for a null pointer.
 *
 * # Safety
 * `x` must hold `dim` doubles.
 */
double cbo_rastrigin(const double *x, size_t dim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBO_H */
