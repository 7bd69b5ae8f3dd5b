#ifndef OPTFB_H
#define OPTFB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes, plus FFI-specific failures.
 */
typedef enum OptfbStatus {
  OptfbStatus_Ok = 0,
  OptfbStatus_ConfigError = 1,
  OptfbStatus_Infeasible = 2,
  OptfbStatus_Diverged = 3,
  OptfbStatus_IqcViolation = 4,
  OptfbStatus_NullPointer = 5,
  OptfbStatus_BufferTooSmall = 6,
  OptfbStatus_Panic = 7,
} OptfbStatus;

/**
 * Opaque experiment handle; create with `optfb_experiment_load` or
 * `optfb_experiment_parse`, release with `optfb_experiment_free`.
 */
typedef struct OptfbExperiment OptfbExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf` as a
 * NUL-terminated string. Returns the number of bytes the full message
 * needs, including the terminator; the copy is truncated if `buf_len`
 * is smaller.
 */
uintptr_t optfb_last_error(char *buf, uintptr_t buf_len);

/**
 * Loads a TOML experiment file. On success `*out` owns the new handle.
 */
enum OptfbStatus optfb_experiment_load(const char *path, struct OptfbExperiment **out);

/**
 * Parses an experiment from TOML text instead of a file.
 */
enum OptfbStatus optfb_experiment_parse(const char *text, struct OptfbExperiment **out);

/**
 * Releases a handle. Passing NULL is a no-op.
 */
void optfb_experiment_free(struct OptfbExperiment *handle);

/**
 * Maximizes the certified decay rate. `alpha_tol <= 0` selects the
 * default relative tolerance. Writes `alpha_max` and the IQC multiplier
 * `sigma` through the out pointers (either may be NULL).
 */
enum OptfbStatus optfb_certify(const struct OptfbExperiment *handle,
                               double alpha_tol,
                               double *out_alpha_max,
                               double *out_sigma);

/**
 * Integrates the closed loop and writes the final augmented state into
 * `buf`. `dt <= 0` selects the configured step. `*out_len` receives the
 * state dimension; `buf` must hold at least that many doubles.
 */
enum OptfbStatus optfb_simulate_final(const struct OptfbExperiment *handle,
                                      double dt,
                                      double *buf,
                                      uintptr_t buf_len,
                                      uintptr_t *out_len);

/**
 * Sample-checks the configured optimizer's IQC around the cost minimizer
 * with `samples` seeded draws; writes the smallest normalized
 * quadratic-form value if `out_min_value` is non-NULL.
 */
enum OptfbStatus optfb_verify_iqc(const struct OptfbExperiment *handle,
                                  uintptr_t samples,
                                  uint64_t seed,
                                  double *out_min_value);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* OPTFB_H */
