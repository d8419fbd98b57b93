/* C interface to the reled road-network simulator and trajectory analytics.
* Generated by cbindgen from crates/ffi; do not edit by hand. */

#ifndef RELED_H
#define RELED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Version of this C ABI. Bumped whenever an exported signature, struct
 * layout, or status-code value changes.
 */
#define RELED_ABI_VERSION 1

/**
 * `metric` value selecting edge length as the route cost.
 */
#define RELED_PATH_METRIC_DISTANCE 0

/**
 * `metric` value selecting live estimated travel time as the route cost.
 */
#define RELED_PATH_METRIC_TIME 1

/**
 * Result of every fallible call. Values are part of the ABI and are never
 * renumbered.
 */
enum ReledStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  /**
   * Success.
   */
  RELED_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RELED_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RELED_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read.
   */
  RELED_STATUS_IO = 3,
  /**
   * A file or string was not valid JSON for the expected schema.
   */
  RELED_STATUS_PARSE = 4,
  /**
   * Inputs were well-formed but failed validation (bad index, bad
   * numeric range, incompatible network and scenario, ...).
   */
  RELED_STATUS_INVALID_ARGUMENT = 5,
  /**
   * No route exists between the requested junctions.
   */
  RELED_STATUS_NO_ROUTE = 6,
  /**
   * The joint action was rejected by the simulator; the episode state is
   * unchanged.
   */
  RELED_STATUS_STEP_REJECTED = 7,
  /**
   * A caller-provided buffer is too short.
   */
  RELED_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * An internal panic was caught at the boundary.
   */
  RELED_STATUS_PANIC = 9,
};
#ifndef __cplusplus
typedef int32_t ReledStatus;
#endif // __cplusplus

/**
 * Opaque simulator handle. Not thread-safe: callers must not share one
 * handle across threads without external synchronisation.
 */
typedef struct ReledEnv ReledEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns [`RELED_ABI_VERSION`]. Callers should check this before using any
 * other function.
 */
uint32_t reled_abi_version(void);

/**
 * Returns the message recorded by the most recent failing call on this
 * thread, or an empty string if none has failed yet. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *reled_last_error(void);

/**
 * Creates a simulator from a network JSON file and a scenario JSON file.
 * On success writes a handle owned by the caller into `out_env`; release it
 * with `reled_env_destroy`. On failure `*out_env` is set to null.
 */
ReledStatus reled_env_create(const char *network_path,
                             const char *scenario_path,
                             struct ReledEnv **out_env);

/**
 * Same as `reled_env_create` but parses the network and scenario from JSON
 * strings instead of files.
 */
ReledStatus reled_env_create_from_json(const char *network_json,
                                       const char *scenario_json,
                                       struct ReledEnv **out_env);

/**
 * Releases a handle created by `reled_env_create` or
 * `reled_env_create_from_json`. Null is a no-op.
 */
void reled_env_destroy(struct ReledEnv *env);

/**
 * Writes the number of controlled agents in the scenario.
 */
ReledStatus reled_env_agent_count(const struct ReledEnv *env, uintptr_t *out_count);

/**
 * Writes the per-agent observation buffer lengths. Both are fixed for the
 * lifetime of a handle: `values` holds the current and destination
 * junction ids followed by two entries per action slot, `mask` holds one
 * validity flag per action slot.
 */
ReledStatus reled_env_observation_dims(const struct ReledEnv *env,
                                       uintptr_t *out_values_len,
                                       uintptr_t *out_mask_len);

/**
 * Starts a new episode. When `use_seed` is true, `seed` drives background
 * traffic; otherwise the seed stored in the scenario is used. Resetting
 * with the same seed reproduces the episode exactly.
 */
ReledStatus reled_env_reset(struct ReledEnv *env, uint64_t seed, bool use_seed);

/**
 * Writes the simulator clock in seconds since the episode started.
 */
ReledStatus reled_env_simulation_time(const struct ReledEnv *env, uint64_t *out_seconds);

/**
 * Writes the number of completed decision rounds this episode.
 */
ReledStatus reled_env_decision_round(const struct ReledEnv *env, uint64_t *out_round);

/**
 * Writes true once every agent has arrived or the time limit has passed.
 */
ReledStatus reled_env_episode_over(const struct ReledEnv *env, bool *out_over);

/**
 * Writes one flag per agent: true when that agent must supply an action in
 * the next `reled_env_step` call. `len` must be at least the agent count.
 */
ReledStatus reled_env_awaiting(const struct ReledEnv *env, bool *out_awaiting, uintptr_t len);

/**
 * Writes one agent's observation. Buffer lengths must be at least the
 * values reported by `reled_env_observation_dims`; entries beyond them are
 * left untouched.
 */
ReledStatus reled_env_observe(const struct ReledEnv *env,
                              uintptr_t agent,
                              double *values_out,
                              uintptr_t values_len,
                              bool *mask_out,
                              uintptr_t mask_len);

/**
 * Advances the simulation by one decision round. `actions` holds one entry
 * per agent: an action slot index for agents flagged by
 * `reled_env_awaiting`, or -1 for everyone else. When non-null,
 * `rewards_out` must hold `len` entries and receives each agent's reward
 * for the round; `done_out` receives the episode-over flag. On
 * `RELED_STATUS_STEP_REJECTED` the episode state is unchanged.
 */
ReledStatus reled_env_step(struct ReledEnv *env,
                           const int32_t *actions,
                           uintptr_t len,
                           double *rewards_out,
                           bool *done_out);

/**
 * Writes true if the agent has reached its destination.
 */
ReledStatus reled_env_agent_arrived(const struct ReledEnv *env, uintptr_t agent, bool *out_arrived);

/**
 * Writes the seconds the agent has spent travelling so far (total journey
 * time once it has arrived or timed out).
 */
ReledStatus reled_env_travel_time(const struct ReledEnv *env,
                                  uintptr_t agent,
                                  uint64_t *out_seconds);

/**
 * Writes the coordinates of the junction the agent most recently reached.
 */
ReledStatus reled_env_agent_position(const struct ReledEnv *env,
                                     uintptr_t agent,
                                     double *out_x,
                                     double *out_y);

/**
 * Computes the cheapest route between two junctions under
 * `RELED_PATH_METRIC_DISTANCE` or `RELED_PATH_METRIC_TIME` (the latter uses
 * the simulator's current congestion estimates). `out_len` receives the
 * number of junctions on the route excluding the start; it is also written
 * on `RELED_STATUS_BUFFER_TOO_SMALL`, so calling with `capacity` 0 sizes
 * the buffer. On success the route's junction ids are written to
 * `junctions_out` and the total cost to `out_cost` when non-null.
 */
ReledStatus reled_env_shortest_path(const struct ReledEnv *env,
                                    uint32_t from,
                                    uint32_t to,
                                    int32_t metric,
                                    uint32_t *junctions_out,
                                    uintptr_t capacity,
                                    uintptr_t *out_len,
                                    double *out_cost);

/**
 * Dynamic time warping distance between two planar point sequences given
 * as interleaved x,y pairs (`a_xy` holds `2 * a_points` doubles). Writes
 * the summed cost of the optimal alignment and the per-matched-pair
 * normalized cost into whichever of `out_raw` and `out_normalized` is
 * non-null. Both sequences must be non-empty.
 */
ReledStatus reled_dtw(const double *a_xy,
                      uintptr_t a_points,
                      const double *b_xy,
                      uintptr_t b_points,
                      double *out_raw,
                      double *out_normalized);

/**
 * Upper bound on the return difference induced by switching policies,
 * given the largest absolute per-round reward, the summed per-round policy
 * divergence, and the discount factor (`0 <= gamma < 1`).
 */
ReledStatus reled_nonstationarity_bound(double max_abs_reward,
                                        double divergence_sum,
                                        double gamma,
                                        double *out_bound);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELED_H */
