#ifndef CAPSERVO_H
#define CAPSERVO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsOutcome {
  CS_OUTCOME_SUCCESS = 0,
  CS_OUTCOME_LOST_TRACK = 1,
  CS_OUTCOME_CONTACT_HALT = 2,
} CsOutcome;

/**
 * Result of every fallible call.
 */
typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_IO = 3,
  CS_STATUS_FORMAT = 4,
  CS_STATUS_GEOMETRY = 5,
  CS_STATUS_SENSOR = 6,
  CS_STATUS_PANIC = 7,
} CsStatus;

typedef enum CsTask {
  CS_TASK_BENT_ELBOW = 0,
  CS_TASK_FOREARM_TILT = 1,
  CS_TASK_BENT_KNEE = 2,
  CS_TASK_MOVING_LIMB = 3,
} CsTask;

/**
 * Limb geometry.
 */
typedef struct CsLimb CsLimb;

/**
 * Trained pose estimator.
 */
typedef struct CsModel CsModel;

/**
 * Electrode array and capacitance model.
 */
typedef struct CsSensor CsSensor;

/**
 * Pose of the sensor relative to the limb, in cm and rad.
 */
typedef struct CsPose {
  double dy;
  double dz;
  double theta_y;
  double theta_z;
} CsPose;

/**
 * World pose of the end effector: position in cm, roll/pitch/yaw in rad.
 */
typedef struct CsEePose {
  double x;
  double y;
  double z;
  double roll;
  double pitch;
  double yaw;
} CsEePose;

/**
 * Summary of a closed-loop run.
 */
typedef struct CsRunResult {
  enum CsOutcome outcome;
  size_t control_steps;
  /**
   * Mean plate clearance over the logged control steps, cm.
   */
  double mean_clearance_cm;
  struct CsEePose final_pose;
} CsRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Loads a model file written by `capservo train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CsStatus cs_model_load(const char *path, struct CsModel **out);

/**
 * Builds a model from the bytes of a model file.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be valid.
 */
enum CsStatus cs_model_from_bytes(const uint8_t *bytes, size_t len, struct CsModel **out);

/**
 * # Safety
 * `model` must come from `cs_model_load`/`cs_model_from_bytes` or be null.
 */
void cs_model_free(struct CsModel *model);

/**
 * Values expected per window (frames times electrodes); 0 for a null model.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t cs_model_input_dim(const struct CsModel *model);

/**
 * Estimates the relative pose from a time-major window of readings.
 *
 * # Safety
 * `window` must point to `len` doubles; `model` and `out` must be valid.
 */
enum CsStatus cs_model_estimate(const struct CsModel *model,
                                const double *window,
                                size_t len,
                                struct CsPose *out);

/**
 * Straight frustum from `base` along `axis` (need not be unit length).
 *
 * # Safety
 * `base`, `axis` must point to 3 doubles and `out` must be valid.
 */
enum CsStatus cs_limb_new_frustum(const double *base,
                                  const double *axis,
                                  double length_cm,
                                  double radius_base_cm,
                                  double radius_tip_cm,
                                  struct CsLimb **out);

/**
 * The limb of a traversal task articulated to `joint_angle_rad`.
 *
 * # Safety
 * `out` must be valid.
 */
enum CsStatus cs_limb_new_task(enum CsTask task, double joint_angle_rad, struct CsLimb **out);

/**
 * # Safety
 * `limb` must come from a `cs_limb_new_*` call or be null.
 */
void cs_limb_free(struct CsLimb *limb);

/**
 * Ground-truth pose of a sensor plate at `ee` relative to the limb at time `t_s`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CsStatus cs_limb_relative_pose(const struct CsLimb *limb,
                                    const struct CsEePose *ee,
                                    double t_s,
                                    struct CsPose *out);

/**
 * Signed clearance from `point` to the limb surface; negative inside.
 *
 * # Safety
 * `point` must point to 3 doubles; `limb` and `out` must be valid.
 */
enum CsStatus cs_limb_clearance(const struct CsLimb *limb,
                                const double *point,
                                double t_s,
                                double *out);

/**
 * End-effector pose that puts the sensor at `pose` over `station_cm` of `segment`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CsStatus cs_limb_place_sensor(const struct CsLimb *limb,
                                   size_t segment,
                                   double station_cm,
                                   const struct CsPose *pose,
                                   struct CsEePose *out);

/**
 * Default electrode array with calibrated noise.
 *
 * # Safety
 * `out` must be valid.
 */
enum CsStatus cs_sensor_new_default(struct CsSensor **out);

/**
 * Sets the noise standard deviation; 0 gives exact readings.
 *
 * # Safety
 * `sensor` must be a live handle.
 */
enum CsStatus cs_sensor_set_noise(struct CsSensor *sensor, double noise_sd);

/**
 * # Safety
 * `sensor` must come from `cs_sensor_new_default` or be null.
 */
void cs_sensor_free(struct CsSensor *sensor);

/**
 * Six electrode readings. Noise is drawn from a stream fixed by `seed` and `step`.
 * Fails with `Sensor` if any part of the plate touches the limb.
 *
 * # Safety
 * `out` must point to room for 6 doubles; other pointers must be valid.
 */
enum CsStatus cs_sensor_read(const struct CsSensor *sensor,
                             const struct CsLimb *limb,
                             const struct CsEePose *ee,
                             double t_s,
                             uint64_t seed,
                             uint64_t step,
                             double *out);

/**
 * `u = kp∘e + kd∘e_dot`. Null gain pointers select the default gains.
 *
 * # Safety
 * `e`, `e_dot`, `out` and any non-null gain pointer must point to 4 doubles.
 */
enum CsStatus cs_pd_action(const double *e,
                           const double *e_dot,
                           const double *kp,
                           const double *kd,
                           double *out);

/**
 * Closed-loop traversal from `start` with default loop settings at speed
 * `v_x_cm_s` for `run_length_cm`. A null `model` uses the true pose.
 * Success only requires the final clearance bound.
 *
 * # Safety
 * `limb`, `sensor`, `start` and `out` must be valid; `model` may be null.
 */
enum CsStatus cs_simulate(const struct CsLimb *limb,
                          const struct CsSensor *sensor,
                          const struct CsModel *model,
                          const struct CsEePose *start,
                          double v_x_cm_s,
                          double run_length_cm,
                          uint64_t seed,
                          struct CsRunResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPSERVO_H */
