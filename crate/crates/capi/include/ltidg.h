/* C interface to the local-time-integration DG solver. */

#ifndef LTIDG_H
#define LTIDG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call into this library.
 */
typedef enum LtiStatus {
  LTI_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LTI_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range (bad filter variant, step size, ...).
   */
  LTI_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The configuration failed to parse or to build a scheme.
   */
  LTI_STATUS_BAD_CONFIG = 3,
  /**
   * The integration itself failed (a solver stalled, or a panic).
   */
  LTI_STATUS_RUN_FAILED = 4,
} LtiStatus;

/**
 * Opaque simulation handle: a parsed configuration with its mesh,
 * operators, filter constants, and step-size bounds resolved.
 */
typedef struct LtiSim LtiSim;

/**
 * Stability constants of a filter.
 */
typedef struct LtiFilterConstants {
  /**
   * Lower bound of the auxiliary function on the admissible window.
   */
  double c_theta;
  /**
   * Squared step-size window of the filter; infinity when unbounded.
   */
  double beta_sq;
  /**
   * Defect bound entering the error constant.
   */
  double c_phi;
  /**
   * 1 when the filter carries no stabilization margin.
   */
  uint8_t unstabilized;
} LtiFilterConstants;

/**
 * Step-size bounds of a configured scheme.
 */
typedef struct LtiCfl {
  /**
   * Filter window bound.
   */
  double tau_psi;
  /**
   * Coarse-region bound with its safety factor applied.
   */
  double tau_lf_coarse;
  /**
   * Plain leapfrog bound on the whole mesh.
   */
  double tau_leapfrog;
  /**
   * Unscaled coarse-only leapfrog bound (hard ceiling).
   */
  double coarse_leapfrog_raw;
  /**
   * What runs accept without the override flag.
   */
  double admissible;
} LtiCfl;

/**
 * Outcome of one integration.
 */
typedef struct LtiRunSummary {
  double tau;
  double final_l2_error;
  double max_l2_error;
  double wall_seconds;
  double final_time;
  uint64_t steps;
  /**
   * Step index of divergence; meaningful only when `diverged` is 1.
   */
  uint64_t diverged_at;
  uint8_t diverged;
  /**
   * Inner filter applications (solver iterations or polynomial stages).
   */
  uint64_t filter_applications;
} LtiRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fills `out` with the stability constants of a filter.  `variant` is
 * 0 for leapfrog (then `leapfrog_theta` in (0,1) sets its window and
 * `p`/`eta` are ignored), 1 for Crank--Nicolson, 2 for Chebyshev.
 *
 * # Safety
 * `out` must point to writable memory for one `LtiFilterConstants`.
 */
enum LtiStatus lti_filter_constants(int variant,
                                    uint32_t p,
                                    double eta,
                                    double leapfrog_theta,
                                    struct LtiFilterConstants *out);

/**
 * Builds a simulation from a TOML document.  Returns null on failure;
 * the message is available through [`lti_last_error_message`].
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
struct LtiSim *lti_sim_new_from_toml(const char *text);

/**
 * Builds a simulation from a TOML file on disk.  Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct LtiSim *lti_sim_new_from_file(const char *path);

/**
 * Fills `out` with the step-size bounds of the configured scheme.
 *
 * # Safety
 * `sim` must come from a constructor and not have been freed; `out` must
 * point to writable memory for one `LtiCfl`.
 */
enum LtiStatus lti_sim_cfl(const struct LtiSim *sim, struct LtiCfl *out);

/**
 * Integrates to the configured end time with step size `tau` (pass a
 * non-positive `tau` for 95% of the admissible bound) and fills `out`.
 * A diverged run reports `Ok` with the `diverged` flag set; `RunFailed`
 * means the integration could not proceed at all.
 *
 * # Safety
 * `sim` must come from a constructor and not have been freed; `out` must
 * point to writable memory for one `LtiRunSummary`.
 */
enum LtiStatus lti_sim_run(const struct LtiSim *sim, double tau, struct LtiRunSummary *out);

/**
 * Frees a simulation handle.  Passing null is a no-op.
 *
 * # Safety
 * `sim` must come from a constructor and must not be used afterwards.
 */
void lti_sim_free(struct LtiSim *sim);

/**
 * Copies the last error message of this thread into `buf` (truncated to
 * `len - 1` bytes, always NUL-terminated when `len > 0`) and returns the
 * full message length in bytes excluding the NUL; 0 means no error is
 * pending.  Pass a null `buf` to query the length alone.
 *
 * # Safety
 * When `buf` is non-null it must point to `len` writable bytes.
 */
uintptr_t lti_last_error_message(char *buf, uintptr_t len);

/**
 * The library version as a static NUL-terminated string.
 */
const char *lti_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LTIDG_H */
