#ifndef PMA_LAB_H
#define PMA_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum PmaStatus {
  PmaStatus_Ok = 0,
  PmaStatus_NullPointer = 1,
  PmaStatus_Config = 2,
  PmaStatus_Audit = 3,
  PmaStatus_Io = 4,
  PmaStatus_InvalidArgument = 5,
  PmaStatus_MissingCheckpoint = 6,
  PmaStatus_Internal = 7,
  PmaStatus_Panic = 8,
} PmaStatus;

/**
 * A simulator instance with its own random stream.
 */
typedef struct PmaEnv PmaEnv;

/**
 * A loaded pretraining checkpoint.
 */
typedef struct PmaModel PmaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pma_last_error(char *buf, size_t len);

/**
 * Loads the checkpoint stored in directory `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum PmaStatus pma_model_load(const char *dir, struct PmaModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`pma_model_load`] and not be used afterwards.
 */
void pma_model_free(struct PmaModel *model);

/**
 * Writes the state and control dimensions. Controls are latent actions for
 * latent-action checkpoints and raw actions otherwise.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum PmaStatus pma_model_dims(const struct PmaModel *model, size_t *state_dim, size_t *control_dim);

/**
 * Predicts the next state for each of `rows` (state, control) pairs and
 * the uncertainty penalty scaled by `lambda`. Arrays are row-major.
 * `penalties` may be null.
 *
 * # Safety
 * Buffers must hold `rows * dim` values for the respective dimension and
 * `penalties`, when non-null, `rows` values.
 */
enum PmaStatus pma_model_predict(const struct PmaModel *model,
                                 size_t rows,
                                 const double *states,
                                 const double *controls,
                                 double lambda,
                                 double *next_states,
                                 double *penalties);

/**
 * Environment action executed for `control` at `state`. `action` must hold
 * `action_dim` values, the action dimension of the checkpoint's
 * environment.
 *
 * # Safety
 * `state` and `control` must hold the sizes reported by [`pma_model_dims`].
 */
enum PmaStatus pma_model_env_action(const struct PmaModel *model,
                                    const double *state,
                                    const double *control,
                                    double *action,
                                    size_t action_dim);

/**
 * Creates environment `name` seeded with `seed`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum PmaStatus pma_env_new(const char *name, uint64_t seed, struct PmaEnv **out);

/**
 * Releases an environment handle; null is ignored.
 *
 * # Safety
 * `env` must come from [`pma_env_new`] and not be used afterwards.
 */
void pma_env_free(struct PmaEnv *env);

/**
 * Writes the state and action dimensions and the episode length.
 *
 * # Safety
 * `env` must be a live handle; the outputs must be writable.
 */
enum PmaStatus pma_env_dims(const struct PmaEnv *env,
                            size_t *state_dim,
                            size_t *action_dim,
                            size_t *horizon);

/**
 * Samples an initial state.
 *
 * # Safety
 * `state` must hold `state_dim` writable values.
 */
enum PmaStatus pma_env_reset(struct PmaEnv *env, double *state);

/**
 * Advances one step from `state` with `action`, scoring it under `task`.
 *
 * # Safety
 * `state` and `next_state` must hold `state_dim` values, `action`
 * `action_dim` values; `task` must be a NUL-terminated string.
 */
enum PmaStatus pma_env_step(struct PmaEnv *env,
                            const char *task,
                            const double *state,
                            const double *action,
                            double *next_state,
                            double *reward,
                            bool *done);

/**
 * Runs one zero-shot evaluation episode of the run in `run_dir` and
 * appends it to the run's evaluation log. `planner` is one of `mppi`,
 * `mbpo` or `sac_full`.
 *
 * # Safety
 * String arguments must be NUL-terminated; the outputs must be writable.
 */
enum PmaStatus pma_evaluate_episode(const char *run_dir,
                                    const char *planner,
                                    const char *task,
                                    double lambda,
                                    uint64_t seed,
                                    double *predicted_return,
                                    double *true_return);

/**
 * Checks the tabular performance bounds on `instances` random problems
 * and writes the smallest slack found. Violations return `Audit`.
 *
 * # Safety
 * `worst_slack` must be writable.
 */
enum PmaStatus pma_tabular_verify(size_t instances,
                                  size_t max_states,
                                  size_t max_actions,
                                  size_t n_latent,
                                  double gamma,
                                  uint64_t seed,
                                  double *worst_slack);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMA_LAB_H */
