#ifndef QUADBENCH_H
#define QUADBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum QbStatus {
  QB_STATUS_OK = 0,
  QB_STATUS_NULL_POINTER = 1,
  QB_STATUS_INVALID_ARGUMENT = 2,
  QB_STATUS_IO = 3,
  QB_STATUS_DIVERGED = 4,
  QB_STATUS_SINGULAR = 5,
  QB_STATUS_EPISODE_DONE = 6,
  QB_STATUS_BUFFER_TOO_SMALL = 7,
  QB_STATUS_PANIC = 8,
} QbStatus;

typedef enum QbTask {
  QB_TASK_HOVER = 0,
  QB_TASK_LISSAJOUS = 1,
  QB_TASK_BALL_CATCH = 2,
} QbTask;

typedef enum QbMorphology {
  QB_MORPHOLOGY_QUADROTOR = 0,
  QB_MORPHOLOGY_AERIAL_MANIPULATOR = 1,
} QbMorphology;

typedef enum QbFidelity {
  QB_FIDELITY_SIMPLE = 0,
  QB_FIDELITY_REALISTIC = 1,
} QbFidelity;

typedef enum QbFeedforward {
  QB_FEEDFORWARD_FF = 0,
  QB_FEEDFORWARD_PID = 1,
  QB_FEEDFORWARD_NONE = 2,
} QbFeedforward;

/*
 One running episode.
 */
typedef struct QbEnv QbEnv;

typedef struct QbGcController QbGcController;

typedef struct QbPolicy QbPolicy;

typedef struct QbGains {
  double kp_xy;
  double kp_z;
  double kv_xy;
  double kv_z;
  double kr_xy;
  double kr_z;
  double kw_xy;
  double kw_z;
} QbGains;

/*
 Rigid-body state; `rotation` is body-to-world, row-major.
 */
typedef struct QbState {
  double position[3];
  double rotation[9];
  double velocity[3];
  /*
   Body frame.
   */
  double angular_velocity[3];
} QbState;

typedef struct QbWrench {
  double thrust;
  double moment[3];
} QbWrench;

/*
 Result of one control step.
 */
typedef struct QbStep {
  double reward;
  double position_error[3];
  double yaw_error;
  bool done;
  bool failed;
} QbStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; valid until the next call
 that fails on the same thread.
 */
const char *qb_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *qb_version(void);

/*
 The manual baseline gains.
 */
struct QbGains qb_gains_manual(void);

/*
 Create an environment and start the episode drawn from `seed`.
 `dr_fraction` is the domain-randomization spread in [0, 1).

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum QbStatus qb_env_new(enum QbTask task,
                         enum QbMorphology morphology,
                         enum QbFidelity fidelity,
                         double dr_fraction,
                         uint64_t seed,
                         struct QbEnv **out);

/*
 # Safety
 `env` must be null or a handle from [`qb_env_new`] not yet freed.
 */
void qb_env_free(struct QbEnv *env);

/*
 Start a new episode drawn from `seed`.

 # Safety
 `env` must be a live handle.
 */
enum QbStatus qb_env_reset(struct QbEnv *env, uint64_t seed);

/*
 SHA-256 hex digest of the episode draw (64 characters plus NUL).

 # Safety
 `env` must be a live handle and `buf` must hold `len` bytes.
 */
enum QbStatus qb_env_draw_hash(const struct QbEnv *env, char *buf, size_t len);

/*
 Episode time of the next control step (s).

 # Safety
 `env` must be a live handle.
 */
enum QbStatus qb_env_time(const struct QbEnv *env, double *out);

/*
 State of the tracked frame (end effector on a manipulator).

 # Safety
 `env` must be a live handle and `out` writable.
 */
enum QbStatus qb_env_state(const struct QbEnv *env, struct QbState *out);

/*
 Policy observation of the current step; `written` receives its length
 (21, or 61 with the waypoint horizon).

 # Safety
 `env` must be a live handle; `buf` must hold `len` doubles.
 */
enum QbStatus qb_env_observation(const struct QbEnv *env,
                                 bool use_horizon,
                                 double *buf,
                                 size_t len,
                                 size_t *written);

/*
 Apply `wrench` for one control step.

 # Safety
 `env` must be a live handle; `out` may be null.
 */
enum QbStatus qb_env_step(struct QbEnv *env, struct QbWrench wrench, struct QbStep *out);

/*
 Geometric controller for the vehicle of `env`. `gains` may be null for
 the manual baseline.

 # Safety
 `env` must be a live handle, `gains` null or valid, `out` writable.
 */
enum QbStatus qb_gc_new(const struct QbEnv *env,
                        const struct QbGains *gains,
                        enum QbFeedforward mode,
                        struct QbGcController **out);

/*
 # Safety
 `gc` must be null or a handle from [`qb_gc_new`] not yet freed.
 */
void qb_gc_free(struct QbGcController *gc);

/*
 Clear the controller's integral and hold state.

 # Safety
 Both handles must be live.
 */
enum QbStatus qb_gc_reset(struct QbGcController *gc, const struct QbEnv *env);

/*
 Wrench command for the current step of `env`.

 # Safety
 Both handles must be live and `out` writable.
 */
enum QbStatus qb_gc_compute(struct QbGcController *gc,
                            const struct QbEnv *env,
                            struct QbWrench *out);

/*
 Load a policy checkpoint (JSON).

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum QbStatus qb_policy_load(const char *path, struct QbPolicy **out);

/*
 # Safety
 `policy` must be null or a handle from [`qb_policy_load`] not yet freed.
 */
void qb_policy_free(struct QbPolicy *policy);

/*
 Observation length the policy expects.

 # Safety
 `policy` must be a live handle.
 */
enum QbStatus qb_policy_input_dim(const struct QbPolicy *policy, size_t *out);

/*
 Deterministic raw actions in [-1, 1]-scale units (4 values).

 # Safety
 `policy` must be live, `obs` must hold `len` doubles and `actions` 4.
 */
enum QbStatus qb_policy_act(const struct QbPolicy *policy,
                            const double *obs,
                            size_t len,
                            double *actions);

/*
 Deterministic wrench command for the current step of `env`.

 # Safety
 Both handles must be live and `out` writable.
 */
enum QbStatus qb_policy_compute(const struct QbPolicy *policy,
                                const struct QbEnv *env,
                                struct QbWrench *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADBENCH_H */
