#ifndef TOSSER_H
#define TOSSER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TosserStatus {
  TOSSER_STATUS_OK = 0,
  TOSSER_STATUS_NULL_POINTER = 1,
  TOSSER_STATUS_INVALID_ARGUMENT = 2,
  TOSSER_STATUS_CONFIG = 3,
  TOSSER_STATUS_UNREACHABLE = 4,
  TOSSER_STATUS_SIMULATION = 5,
  TOSSER_STATUS_CHECKPOINT = 6,
  TOSSER_STATUS_IO = 7,
  TOSSER_STATUS_PANIC = 8,
} TosserStatus;

/**
 * Experiment configuration (workspace, objects, network, training).
 */
typedef struct TosserConfig TosserConfig;

/**
 * Network parameters for one policy variant.
 */
typedef struct TosserPolicy TosserPolicy;

/**
 * A bin of objects plus the box layout the throws aim at.
 */
typedef struct TosserSimulator TosserSimulator;

/**
 * Release pose for a throw.
 */
typedef struct TosserReleasePlan {
  double release[3];
  double velocity[3];
  double planar_speed;
  double azimuth;
} TosserReleasePlan;

/**
 * Greedy evaluation summary.
 */
typedef struct TosserMetrics {
  size_t attempts;
  double grasp_success_pct;
  size_t throws;
  double throw_success_pct;
} TosserMetrics;

/**
 * Outcome of one greedy grasp-and-throw.
 */
typedef struct TosserStepResult {
  bool grasp_success;
  bool thrown;
  bool throw_success;
  /**
   * Landing point; zeros when nothing was thrown.
   */
  double landing[3];
  /**
   * Commanded planar release speed; 0 when nothing was thrown.
   */
  double executed_speed;
} TosserStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *tosser_last_error(void);

/**
 * Parses a TOML experiment config. `toml` may be NULL for the defaults.
 *
 * # Safety
 * `toml` is NULL or a NUL-terminated string; `out` is a valid pointer.
 */
enum TosserStatus tosser_config_new(const char *toml, struct TosserConfig **out);

/**
 * # Safety
 * `cfg` is NULL or a handle from [`tosser_config_new`] not yet freed.
 */
void tosser_config_free(struct TosserConfig *cfg);

/**
 * Number of target boxes in the training layout.
 *
 * # Safety
 * `cfg` is a live config handle.
 */
size_t tosser_config_num_boxes(const struct TosserConfig *cfg);

/**
 * Ballistic release plan for a landing target.
 *
 * # Safety
 * `cfg` is a live config handle; `out` is a valid pointer.
 */
enum TosserStatus tosser_solve_release(const struct TosserConfig *cfg,
                                       double x,
                                       double y,
                                       double z,
                                       struct TosserReleasePlan *out);

/**
 * Simulator with the config's object set and training box layout.
 *
 * # Safety
 * `cfg` is a live config handle; `out` is a valid pointer.
 */
enum TosserStatus tosser_simulator_new(const struct TosserConfig *cfg,
                                       uint64_t seed,
                                       struct TosserSimulator **out);

/**
 * # Safety
 * `sim` is NULL or a handle from [`tosser_simulator_new`] not yet freed.
 */
void tosser_simulator_free(struct TosserSimulator *sim);

/**
 * Renders the normalized two-channel heightmap (height plane, then
 * intensity plane, rows along +y). Always writes the size to `width` and
 * `height`; copies the data when `buf` is non-NULL and `len` is at least
 * `2 * width * height`.
 *
 * # Safety
 * `sim` is a live handle; `width` and `height` are valid pointers; `buf`
 * is NULL or points to `len` writable floats.
 */
enum TosserStatus tosser_simulator_heightmap(const struct TosserSimulator *sim,
                                             float *buf,
                                             size_t len,
                                             size_t *width,
                                             size_t *height);

/**
 * Untrained policy of the config's variant.
 *
 * # Safety
 * `cfg` is a live config handle; `out` is a valid pointer.
 */
enum TosserStatus tosser_policy_new(const struct TosserConfig *cfg,
                                    uint64_t seed,
                                    struct TosserPolicy **out);

/**
 * # Safety
 * `policy` is NULL or a policy handle not yet freed.
 */
void tosser_policy_free(struct TosserPolicy *policy);

/**
 * Writes the parameters to `path`.
 *
 * # Safety
 * `policy` is a live handle; `path` is a NUL-terminated string.
 */
enum TosserStatus tosser_policy_save(const struct TosserPolicy *policy, const char *path);

/**
 * Replaces the parameters with those stored at `path`.
 *
 * # Safety
 * `policy` is a live handle; `path` is a NUL-terminated string.
 */
enum TosserStatus tosser_policy_load(struct TosserPolicy *policy, const char *path);

/**
 * Trains the config's variant from scratch for `train.steps` steps.
 *
 * # Safety
 * `cfg` is a live config handle; `out` is a valid pointer.
 */
enum TosserStatus tosser_train(const struct TosserConfig *cfg,
                               uint64_t seed,
                               struct TosserPolicy **out);

/**
 * Greedy evaluation for `eval_steps` steps on the config's objects and
 * evaluation layout. Parameters are not modified.
 *
 * # Safety
 * `cfg` and `policy` are live handles; `out` is a valid pointer.
 */
enum TosserStatus tosser_evaluate(const struct TosserConfig *cfg,
                                  const struct TosserPolicy *policy,
                                  uint64_t seed,
                                  struct TosserMetrics *out);

/**
 * One greedy grasp-and-throw toward `target_box`. Refills the bin when it
 * runs empty.
 *
 * # Safety
 * `policy` and `sim` are live handles; `out` is a valid pointer.
 */
enum TosserStatus tosser_step(const struct TosserPolicy *policy,
                              struct TosserSimulator *sim,
                              size_t target_box,
                              struct TosserStepResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOSSER_H */
