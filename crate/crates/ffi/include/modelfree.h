#ifndef MODELFREE_H
#define MODELFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_DOMAIN = 2,
  MF_STATUS_CONFIG = 3,
  /**
   * The estimator window is not yet full; no value was written.
   */
  MF_STATUS_NOT_READY = 4,
  MF_STATUS_IDENTIFICATION = 5,
  MF_STATUS_DIVERGED = 6,
  MF_STATUS_IO = 7,
  MF_STATUS_INVALID_UTF8 = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  MF_STATUS_PANIC = 9,
} MfStatus;

/**
 * Sliding-window derivative estimator.
 */
typedef struct MfEstimator MfEstimator;

/**
 * SISO intelligent PID tracking a constant setpoint.
 */
typedef struct MfIpid MfIpid;

/**
 * Catalog plant with its simulation state.
 */
typedef struct MfPlant MfPlant;

/**
 * Finished closed-loop scenario run.
 */
typedef struct MfRun MfRun;

/**
 * Parameters of [`mf_ipid_new`].
 */
typedef struct MfIpidParams {
  /**
   * Order of the local model, 1 or 2.
   */
  uint32_t nu;
  double alpha;
  double kp;
  double ki;
  /**
   * Must be 0 when `nu` is 1.
   */
  double kd;
  double window;
  uint32_t degree;
  double ts;
  double setpoint;
  /**
   * Input held before the first step.
   */
  double u_init;
} MfIpidParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *mf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * Creates an estimator of `y^(order)` from a local polynomial of `degree`
 * over a window of `window` seconds sampled every `ts`. Null on failure.
 */
struct MfEstimator *mf_estimator_new(uint32_t order, uint32_t degree, double window, double ts);

/**
 * # Safety
 * `est` must come from [`mf_estimator_new`] and not be freed.
 */
enum MfStatus mf_estimator_push(struct MfEstimator *est, double sample);

/**
 * Writes the current estimate to `out`, or returns `NotReady` while warming up.
 *
 * # Safety
 * `est` must come from [`mf_estimator_new`]; `out` must be writable.
 */
enum MfStatus mf_estimator_value(const struct MfEstimator *est, double *out);

/**
 * # Safety
 * `est` must come from [`mf_estimator_new`] or be null.
 */
enum MfStatus mf_estimator_reset(struct MfEstimator *est);

/**
 * # Safety
 * `est` must come from [`mf_estimator_new`] or be null; it is invalid afterwards.
 */
void mf_estimator_free(struct MfEstimator *est);

/**
 * # Safety
 * `params` must point to a readable [`MfIpidParams`]. Null on failure.
 */
struct MfIpid *mf_ipid_new(const struct MfIpidParams *params);

/**
 * Feeds one measurement and the input applied over the previous period.
 * Writes the next input to `u_out`, or returns `NotReady` while the
 * estimators fill (the caller keeps its current input meanwhile).
 *
 * # Safety
 * `ipid` must come from [`mf_ipid_new`]; `u_out` must be writable.
 */
enum MfStatus mf_ipid_step(struct MfIpid *ipid, double y, double u_prev, double *u_out);

/**
 * Latest estimate of the lumped term `F`.
 *
 * # Safety
 * `ipid` must come from [`mf_ipid_new`]; `out` must be writable.
 */
enum MfStatus mf_ipid_f_estimate(const struct MfIpid *ipid, double *out);

/**
 * # Safety
 * `ipid` must come from [`mf_ipid_new`] or be null; it is invalid afterwards.
 */
void mf_ipid_free(struct MfIpid *ipid);

/**
 * Builds a catalog plant by label, e.g. `"stable-siso"` or `"cubic"`, at rest
 * with zero input. Null on failure.
 *
 * # Safety
 * `label` must be a NUL-terminated string.
 */
struct MfPlant *mf_plant_new(const char *label);

/**
 * # Safety
 * `plant` must come from [`mf_plant_new`].
 */
size_t mf_plant_input_dim(const struct MfPlant *plant);

/**
 * # Safety
 * `plant` must come from [`mf_plant_new`].
 */
size_t mf_plant_output_dim(const struct MfPlant *plant);

/**
 * Returns the plant to its initial state and time zero.
 *
 * # Safety
 * `plant` must come from [`mf_plant_new`].
 */
enum MfStatus mf_plant_reset(struct MfPlant *plant);

/**
 * Holds `u` (length `input_dim`) for `ts` seconds and integrates.
 *
 * # Safety
 * `plant` must come from [`mf_plant_new`]; `u` must hold `input_dim` values.
 */
enum MfStatus mf_plant_step(struct MfPlant *plant, const double *u, double ts);

/**
 * Writes the current outputs to `y` (length `output_dim`).
 *
 * # Safety
 * `plant` must come from [`mf_plant_new`]; `y` must have room for `output_dim` values.
 */
enum MfStatus mf_plant_output(const struct MfPlant *plant, double *y);

/**
 * Current simulation time in seconds.
 *
 * # Safety
 * `plant` must come from [`mf_plant_new`].
 */
double mf_plant_time(const struct MfPlant *plant);

/**
 * # Safety
 * `plant` must come from [`mf_plant_new`] or be null; it is invalid afterwards.
 */
void mf_plant_free(struct MfPlant *plant);

/**
 * Runs a catalog scenario (label, `label:baseline` or file path) and stores
 * the result in `*out`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum MfStatus mf_scenario_run(const char *name, bool noiseless, struct MfRun **out);

/**
 * Number of controlled outputs.
 *
 * # Safety
 * `run` must come from [`mf_scenario_run`].
 */
size_t mf_run_outputs(const struct MfRun *run);

/**
 * RMS tracking error of output `j` (zero-based) over the evaluation window.
 *
 * # Safety
 * `run` must come from [`mf_scenario_run`]; `out` must be writable.
 */
enum MfStatus mf_run_rms(const struct MfRun *run, size_t j, double *out);

/**
 * # Safety
 * `run` must come from [`mf_scenario_run`] or be null; it is invalid afterwards.
 */
void mf_run_free(struct MfRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODELFREE_H */
