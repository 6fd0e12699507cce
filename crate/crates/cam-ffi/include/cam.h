#ifndef CAM_H
#define CAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values match the CLI exit codes, with
 * `NullPointer` on top for arguments the type system cannot police.
 */
typedef enum CamStatus {
  CAM_STATUS_OK = 0,
  CAM_STATUS_IO_ERROR = 1,
  CAM_STATUS_CONFIG_ERROR = 2,
  CAM_STATUS_CONTRACT_ERROR = 3,
  CAM_STATUS_NUMERIC_ERROR = 4,
  CAM_STATUS_NULL_POINTER = 5,
} CamStatus;

/**
 * A loaded scoring model. Immutable; safe to share across threads.
 */
typedef struct CamModel CamModel;

/**
 * One world snapshot: agent states, goals, obstacle centers.
 */
typedef struct CamWorld CamWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cam_version(void);

/**
 * Message from the last failing call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *cam_last_error(void);

/**
 * Load a checkpoint from a JSON file produced by `cam train`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point at writable storage.
 */
enum CamStatus cam_model_load(const char *path, struct CamModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from `cam_model_load` and not be freed twice.
 */
void cam_model_free(struct CamModel *model);

/**
 * Environment name the model was trained for ("car", "dyn-dubins",
 * "drone", "integrator") as a static string; null for a null model.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *cam_model_env(const struct CamModel *model);

/**
 * Per-agent action dimensionality; 0 for a null model.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t cam_model_action_dim(const struct CamModel *model);

/**
 * Per-agent state dimensionality; 0 for a null model.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t cam_model_state_dim(const struct CamModel *model);

/**
 * Build a world snapshot.
 *
 * `agent_states` is `n_agents x state_dim(env)`, `goals` is
 * `n_agents x position_dim(env)` (null fills zeros; scoring never reads
 * goals), `obstacles` is `n_obstacles x 2` horizontal centers. At least
 * one agent and a positive `map_side` are required.
 *
 * # Safety
 * Arrays must hold the stated number of elements; `env` must be
 * NUL-terminated; `out` must point at writable storage.
 */
enum CamStatus cam_world_new(const char *env,
                             double map_side,
                             const double *agent_states,
                             uint32_t n_agents,
                             const double *goals,
                             const double *obstacles,
                             uint32_t n_obstacles,
                             struct CamWorld **out);

/**
 * Release a world handle. Null is a no-op.
 *
 * # Safety
 * `world` must come from `cam_world_new` and not be freed twice.
 */
void cam_world_free(struct CamWorld *world);

/**
 * Agents within the neighbor radius of `agent`; `u32::MAX` on error.
 *
 * # Safety
 * Both handles must be live.
 */
uint32_t cam_world_neighbor_count(const struct CamWorld *world, uint32_t agent);

/**
 * Score `n_actions` candidates (row-major `n_actions x action_dim`) for
 * one agent, writing `n_actions` values to `out_scores`. An action is
 * admissible iff its score is >= 0.
 *
 * With `decompose` set, oversized neighborhoods are split to the edge
 * caps and composed by elementwise min; `seed` fixes the split. Both cap
 * arguments must then be at least 1 (2 and 9 mirror training). Vector
 * environments and within-caps graphs score identically either way.
 *
 * # Safety
 * Handles must be live; `actions` must hold `n_actions * action_dim`
 * values; `out_scores` must have room for `n_actions` values.
 */
enum CamStatus cam_score_actions(const struct CamModel *model,
                                 const struct CamWorld *world,
                                 uint32_t agent,
                                 const double *actions,
                                 uint32_t n_actions,
                                 bool decompose,
                                 uint32_t max_agent_edges,
                                 uint32_t max_obstacle_edges,
                                 uint64_t seed,
                                 double *out_scores);

/**
 * Pick the action to execute from scored candidates: the
 * highest-preference admissible one, else the highest-scoring one plus a
 * uniform perturbation of magnitude `noise_mag` per dimension (seeded by
 * `seed`; pass 0.0 for greedy inference). `preferences` may be null,
 * which makes every admissible candidate tie and the lowest index win.
 * Writes `action_dim` values to `out_action`.
 *
 * # Safety
 * `actions` must hold `n_actions * action_dim` values, `scores` (and
 * `preferences` when non-null) `n_actions` values; `out_action` must
 * have room for `action_dim` values.
 */
enum CamStatus cam_select_action(const double *actions,
                                 uint32_t n_actions,
                                 uint32_t action_dim,
                                 const double *scores,
                                 const double *preferences,
                                 double noise_mag,
                                 uint64_t seed,
                                 double *out_action);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAM_H */
