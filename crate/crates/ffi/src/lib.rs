//! C ABI over the road-network simulator and the trajectory analytics.
//!
//! Design rules, uniform across every entry point:
//!
//! * Handles are opaque heap pointers created and destroyed only by this
//!   library. Passing a handle to any other `reled_*` function after
//!   `reled_env_destroy` is undefined behaviour, as with any C object.
//! * Every fallible function returns a [`ReledStatus`]; `RELED_STATUS_OK`
//!   is zero. On failure a human-readable message is stored in thread-local
//!   storage and stays valid until the next failing call on the same thread
//!   ([`reled_last_error`]).
//! * Panics never unwind across the boundary; they are caught and reported
//!   as `RELED_STATUS_PANIC`.
//! * Out-parameters are written only on success unless a function documents
//!   otherwise (`reled_env_shortest_path` writes `out_len` on
//!   `RELED_STATUS_BUFFER_TOO_SMALL` so callers can size and retry).
//!
//! The committed header `include/reled.h` is generated from this file at
//! build time; regenerating it is part of the normal build.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, UnwindSafe};

use reled::roadnet::{
    NavEnv, NetworkError, NetworkFile, PathError, PathMetric, RoadNetwork, Scenario, ScenarioError,
};
use reled::sed::nonstationarity_bound;
use reled::trajectory::dtw;

/// Version of this C ABI. Bumped whenever an exported signature, struct
/// layout, or status-code value changes.
pub const RELED_ABI_VERSION: u32 = 1;

/// `metric` value selecting edge length as the route cost.
pub const RELED_PATH_METRIC_DISTANCE: i32 = 0;
/// `metric` value selecting live estimated travel time as the route cost.
pub const RELED_PATH_METRIC_TIME: i32 = 1;

/// Result of every fallible call. Values are part of the ABI and are never
/// renumbered.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReledStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read.
    Io = 3,
    /// A file or string was not valid JSON for the expected schema.
    Parse = 4,
    /// Inputs were well-formed but failed validation (bad index, bad
    /// numeric range, incompatible network and scenario, ...).
    InvalidArgument = 5,
    /// No route exists between the requested junctions.
    NoRoute = 6,
    /// The joint action was rejected by the simulator; the episode state is
    /// unchanged.
    StepRejected = 7,
    /// A caller-provided buffer is too short.
    BufferTooSmall = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// Opaque simulator handle. Not thread-safe: callers must not share one
/// handle across threads without external synchronisation.
pub struct ReledEnv {
    inner: NavEnv,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: ReledStatus, msg: impl std::fmt::Display) -> ReledStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    status
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".to_string()
    }
}

/// Runs an entry-point body, translating `Err` into its status and panics
/// into `Panic`. Closures capture only raw pointers and values, which keeps
/// them unwind-safe without assertions.
fn run(body: impl FnOnce() -> Result<(), ReledStatus> + UnwindSafe) -> ReledStatus {
    match catch_unwind(body) {
        Ok(Ok(())) => ReledStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => fail(
            ReledStatus::Panic,
            format!("internal panic: {}", panic_text(payload)),
        ),
    }
}

unsafe fn text_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, ReledStatus> {
    if ptr.is_null() {
        return Err(fail(
            ReledStatus::NullPointer,
            format!("{name} must not be null"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ReledStatus::InvalidUtf8, format!("{name} must be valid UTF-8")))
}

unsafe fn env_ref<'a>(ptr: *const ReledEnv) -> Result<&'a NavEnv, ReledStatus> {
    if ptr.is_null() {
        return Err(fail(ReledStatus::NullPointer, "env must not be null"));
    }
    Ok(&(*ptr).inner)
}

unsafe fn env_mut<'a>(ptr: *mut ReledEnv) -> Result<&'a mut NavEnv, ReledStatus> {
    if ptr.is_null() {
        return Err(fail(ReledStatus::NullPointer, "env must not be null"));
    }
    Ok(&mut (*ptr).inner)
}

unsafe fn out_slot<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, ReledStatus> {
    if ptr.is_null() {
        return Err(fail(
            ReledStatus::NullPointer,
            format!("{name} must not be null"),
        ));
    }
    Ok(&mut *ptr)
}

fn agent_in_range(env: &NavEnv, agent: usize) -> Result<(), ReledStatus> {
    if agent >= env.agent_count() {
        return Err(fail(
            ReledStatus::InvalidArgument,
            format!(
                "agent {agent} out of range; the scenario has {} agents",
                env.agent_count()
            ),
        ));
    }
    Ok(())
}

fn network_status(err: &NetworkError) -> ReledStatus {
    match err {
        NetworkError::Io { .. } => ReledStatus::Io,
        NetworkError::Parse { .. } => ReledStatus::Parse,
        _ => ReledStatus::InvalidArgument,
    }
}

fn scenario_status(err: &ScenarioError) -> ReledStatus {
    match err {
        ScenarioError::Io { .. } => ReledStatus::Io,
        ScenarioError::Parse { .. } => ReledStatus::Parse,
        _ => ReledStatus::InvalidArgument,
    }
}

/// Returns [`RELED_ABI_VERSION`]. Callers should check this before using any
/// other function.
#[no_mangle]
pub extern "C" fn reled_abi_version() -> u32 {
    RELED_ABI_VERSION
}

/// Returns the message recorded by the most recent failing call on this
/// thread, or an empty string if none has failed yet. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn reled_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a simulator from a network JSON file and a scenario JSON file.
/// On success writes a handle owned by the caller into `out_env`; release it
/// with `reled_env_destroy`. On failure `*out_env` is set to null.
#[no_mangle]
pub unsafe extern "C" fn reled_env_create(
    network_path: *const c_char,
    scenario_path: *const c_char,
    out_env: *mut *mut ReledEnv,
) -> ReledStatus {
    run(move || {
        let out = out_slot(out_env, "out_env")?;
        *out = std::ptr::null_mut();
        let network_path = text_arg(network_path, "network_path")?;
        let scenario_path = text_arg(scenario_path, "scenario_path")?;
        let network =
            RoadNetwork::from_file(network_path).map_err(|e| fail(network_status(&e), e))?;
        let scenario =
            Scenario::from_file(scenario_path).map_err(|e| fail(scenario_status(&e), e))?;
        let env = NavEnv::new(network, scenario).map_err(|e| fail(scenario_status(&e), e))?;
        *out = Box::into_raw(Box::new(ReledEnv { inner: env }));
        Ok(())
    })
}

/// Same as `reled_env_create` but parses the network and scenario from JSON
/// strings instead of files.
#[no_mangle]
pub unsafe extern "C" fn reled_env_create_from_json(
    network_json: *const c_char,
    scenario_json: *const c_char,
    out_env: *mut *mut ReledEnv,
) -> ReledStatus {
    run(move || {
        let out = out_slot(out_env, "out_env")?;
        *out = std::ptr::null_mut();
        let network_json = text_arg(network_json, "network_json")?;
        let scenario_json = text_arg(scenario_json, "scenario_json")?;
        let file: NetworkFile = serde_json::from_str(network_json)
            .map_err(|e| fail(ReledStatus::Parse, format!("network_json: {e}")))?;
        let network =
            RoadNetwork::from_description(file).map_err(|e| fail(network_status(&e), e))?;
        let scenario: Scenario = serde_json::from_str(scenario_json)
            .map_err(|e| fail(ReledStatus::Parse, format!("scenario_json: {e}")))?;
        let env = NavEnv::new(network, scenario).map_err(|e| fail(scenario_status(&e), e))?;
        *out = Box::into_raw(Box::new(ReledEnv { inner: env }));
        Ok(())
    })
}

/// Releases a handle created by `reled_env_create` or
/// `reled_env_create_from_json`. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn reled_env_destroy(env: *mut ReledEnv) {
    if env.is_null() {
        return;
    }
    let _ = catch_unwind(move || drop(Box::from_raw(env)));
}

/// Writes the number of controlled agents in the scenario.
#[no_mangle]
pub unsafe extern "C" fn reled_env_agent_count(
    env: *const ReledEnv,
    out_count: *mut usize,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        *out_slot(out_count, "out_count")? = env.agent_count();
        Ok(())
    })
}

/// Writes the per-agent observation buffer lengths. Both are fixed for the
/// lifetime of a handle: `values` holds the current and destination
/// junction ids followed by two entries per action slot, `mask` holds one
/// validity flag per action slot.
#[no_mangle]
pub unsafe extern "C" fn reled_env_observation_dims(
    env: *const ReledEnv,
    out_values_len: *mut usize,
    out_mask_len: *mut usize,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        let obs = env.observe(0);
        *out_slot(out_values_len, "out_values_len")? = obs.values.len();
        *out_slot(out_mask_len, "out_mask_len")? = obs.mask.len();
        Ok(())
    })
}

/// Starts a new episode. When `use_seed` is true, `seed` drives background
/// traffic; otherwise the seed stored in the scenario is used. Resetting
/// with the same seed reproduces the episode exactly.
#[no_mangle]
pub unsafe extern "C" fn reled_env_reset(
    env: *mut ReledEnv,
    seed: u64,
    use_seed: bool,
) -> ReledStatus {
    run(move || {
        let env = env_mut(env)?;
        env.reset(if use_seed { Some(seed) } else { None });
        Ok(())
    })
}

/// Writes the simulator clock in seconds since the episode started.
#[no_mangle]
pub unsafe extern "C" fn reled_env_simulation_time(
    env: *const ReledEnv,
    out_seconds: *mut u64,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        *out_slot(out_seconds, "out_seconds")? = env.simulation_time();
        Ok(())
    })
}

/// Writes the number of completed decision rounds this episode.
#[no_mangle]
pub unsafe extern "C" fn reled_env_decision_round(
    env: *const ReledEnv,
    out_round: *mut u64,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        *out_slot(out_round, "out_round")? = env.decision_round();
        Ok(())
    })
}

/// Writes true once every agent has arrived or the time limit has passed.
#[no_mangle]
pub unsafe extern "C" fn reled_env_episode_over(
    env: *const ReledEnv,
    out_over: *mut bool,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        *out_slot(out_over, "out_over")? = env.episode_over();
        Ok(())
    })
}

/// Writes one flag per agent: true when that agent must supply an action in
/// the next `reled_env_step` call. `len` must be at least the agent count.
#[no_mangle]
pub unsafe extern "C" fn reled_env_awaiting(
    env: *const ReledEnv,
    out_awaiting: *mut bool,
    len: usize,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        if out_awaiting.is_null() {
            return Err(fail(ReledStatus::NullPointer, "out_awaiting must not be null"));
        }
        let awaiting = env.awaiting_decision();
        if len < awaiting.len() {
            return Err(fail(
                ReledStatus::BufferTooSmall,
                format!("out_awaiting holds {len} entries but {} are needed", awaiting.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out_awaiting, len)[..awaiting.len()]
            .copy_from_slice(&awaiting);
        Ok(())
    })
}

/// Writes one agent's observation. Buffer lengths must be at least the
/// values reported by `reled_env_observation_dims`; entries beyond them are
/// left untouched.
#[no_mangle]
pub unsafe extern "C" fn reled_env_observe(
    env: *const ReledEnv,
    agent: usize,
    values_out: *mut f64,
    values_len: usize,
    mask_out: *mut bool,
    mask_len: usize,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        agent_in_range(env, agent)?;
        if values_out.is_null() {
            return Err(fail(ReledStatus::NullPointer, "values_out must not be null"));
        }
        if mask_out.is_null() {
            return Err(fail(ReledStatus::NullPointer, "mask_out must not be null"));
        }
        let obs = env.observe(agent);
        if values_len < obs.values.len() || mask_len < obs.mask.len() {
            return Err(fail(
                ReledStatus::BufferTooSmall,
                format!(
                    "observation needs {} values and {} mask entries, buffers hold {} and {}",
                    obs.values.len(),
                    obs.mask.len(),
                    values_len,
                    mask_len
                ),
            ));
        }
        std::slice::from_raw_parts_mut(values_out, values_len)[..obs.values.len()]
            .copy_from_slice(&obs.values);
        std::slice::from_raw_parts_mut(mask_out, mask_len)[..obs.mask.len()]
            .copy_from_slice(&obs.mask);
        Ok(())
    })
}

/// Advances the simulation by one decision round. `actions` holds one entry
/// per agent: an action slot index for agents flagged by
/// `reled_env_awaiting`, or -1 for everyone else. When non-null,
/// `rewards_out` must hold `len` entries and receives each agent's reward
/// for the round; `done_out` receives the episode-over flag. On
/// `RELED_STATUS_STEP_REJECTED` the episode state is unchanged.
#[no_mangle]
pub unsafe extern "C" fn reled_env_step(
    env: *mut ReledEnv,
    actions: *const i32,
    len: usize,
    rewards_out: *mut f64,
    done_out: *mut bool,
) -> ReledStatus {
    run(move || {
        let env = env_mut(env)?;
        if actions.is_null() {
            return Err(fail(ReledStatus::NullPointer, "actions must not be null"));
        }
        let raw = std::slice::from_raw_parts(actions, len);
        let mut joint = Vec::with_capacity(len);
        for (agent, &a) in raw.iter().enumerate() {
            match a {
                -1 => joint.push(None),
                a if a >= 0 => joint.push(Some(a as usize)),
                bad => {
                    return Err(fail(
                        ReledStatus::InvalidArgument,
                        format!("agent {agent}: action {bad} is neither a slot index nor -1"),
                    ))
                }
            }
        }
        let outcome = env
            .step(&joint)
            .map_err(|e| fail(ReledStatus::StepRejected, e))?;
        if !rewards_out.is_null() {
            let rewards = std::slice::from_raw_parts_mut(rewards_out, len);
            for (slot, step) in rewards.iter_mut().zip(&outcome.agents) {
                *slot = step.reward;
            }
        }
        if !done_out.is_null() {
            *done_out = env.episode_over();
        }
        Ok(())
    })
}

/// Writes true if the agent has reached its destination.
#[no_mangle]
pub unsafe extern "C" fn reled_env_agent_arrived(
    env: *const ReledEnv,
    agent: usize,
    out_arrived: *mut bool,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        agent_in_range(env, agent)?;
        *out_slot(out_arrived, "out_arrived")? = env.arrived(agent);
        Ok(())
    })
}

/// Writes the seconds the agent has spent travelling so far (total journey
/// time once it has arrived or timed out).
#[no_mangle]
pub unsafe extern "C" fn reled_env_travel_time(
    env: *const ReledEnv,
    agent: usize,
    out_seconds: *mut u64,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        agent_in_range(env, agent)?;
        *out_slot(out_seconds, "out_seconds")? = env.travel_time(agent);
        Ok(())
    })
}

/// Writes the coordinates of the junction the agent most recently reached.
#[no_mangle]
pub unsafe extern "C" fn reled_env_agent_position(
    env: *const ReledEnv,
    agent: usize,
    out_x: *mut f64,
    out_y: *mut f64,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        agent_in_range(env, agent)?;
        let (x, y) = env.agent_coords(agent);
        *out_slot(out_x, "out_x")? = x;
        *out_slot(out_y, "out_y")? = y;
        Ok(())
    })
}

/// Computes the cheapest route between two junctions under
/// `RELED_PATH_METRIC_DISTANCE` or `RELED_PATH_METRIC_TIME` (the latter uses
/// the simulator's current congestion estimates). `out_len` receives the
/// number of junctions on the route excluding the start; it is also written
/// on `RELED_STATUS_BUFFER_TOO_SMALL`, so calling with `capacity` 0 sizes
/// the buffer. On success the route's junction ids are written to
/// `junctions_out` and the total cost to `out_cost` when non-null.
#[no_mangle]
pub unsafe extern "C" fn reled_env_shortest_path(
    env: *const ReledEnv,
    from: u32,
    to: u32,
    metric: i32,
    junctions_out: *mut u32,
    capacity: usize,
    out_len: *mut usize,
    out_cost: *mut f64,
) -> ReledStatus {
    run(move || {
        let env = env_ref(env)?;
        let metric = match metric {
            RELED_PATH_METRIC_DISTANCE => PathMetric::Distance,
            RELED_PATH_METRIC_TIME => PathMetric::Time,
            other => {
                return Err(fail(
                    ReledStatus::InvalidArgument,
                    format!("unknown path metric {other}"),
                ))
            }
        };
        let out_len = out_slot(out_len, "out_len")?;
        let route = env.shortest_path(from, to, metric).map_err(|e| match e {
            PathError::Unreachable { .. } => fail(ReledStatus::NoRoute, e),
            other => fail(ReledStatus::InvalidArgument, other),
        })?;
        *out_len = route.junctions.len();
        if capacity < route.junctions.len() {
            return Err(fail(
                ReledStatus::BufferTooSmall,
                format!(
                    "route needs {} entries but the buffer holds {capacity}",
                    route.junctions.len()
                ),
            ));
        }
        if !route.junctions.is_empty() {
            if junctions_out.is_null() {
                return Err(fail(ReledStatus::NullPointer, "junctions_out must not be null"));
            }
            std::slice::from_raw_parts_mut(junctions_out, route.junctions.len())
                .copy_from_slice(&route.junctions);
        }
        if !out_cost.is_null() {
            *out_cost = route.cost;
        }
        Ok(())
    })
}

/// Dynamic time warping distance between two planar point sequences given
/// as interleaved x,y pairs (`a_xy` holds `2 * a_points` doubles). Writes
/// the summed cost of the optimal alignment and the per-matched-pair
/// normalized cost into whichever of `out_raw` and `out_normalized` is
/// non-null. Both sequences must be non-empty.
#[no_mangle]
pub unsafe extern "C" fn reled_dtw(
    a_xy: *const f64,
    a_points: usize,
    b_xy: *const f64,
    b_points: usize,
    out_raw: *mut f64,
    out_normalized: *mut f64,
) -> ReledStatus {
    run(move || {
        if a_xy.is_null() {
            return Err(fail(ReledStatus::NullPointer, "a_xy must not be null"));
        }
        if b_xy.is_null() {
            return Err(fail(ReledStatus::NullPointer, "b_xy must not be null"));
        }
        let take = |ptr: *const f64, points: usize, name: &str| {
            let doubles = points.checked_mul(2).ok_or_else(|| {
                fail(
                    ReledStatus::InvalidArgument,
                    format!("{name}: point count {points} overflows"),
                )
            })?;
            let flat = std::slice::from_raw_parts(ptr, doubles);
            Ok(flat
                .chunks_exact(2)
                .map(|pair| (pair[0], pair[1]))
                .collect::<Vec<_>>())
        };
        let a = take(a_xy, a_points, "a_xy")?;
        let b = take(b_xy, b_points, "b_xy")?;
        let result = dtw(&a, &b).map_err(|e| fail(ReledStatus::InvalidArgument, e))?;
        if !out_raw.is_null() {
            *out_raw = result.raw;
        }
        if !out_normalized.is_null() {
            *out_normalized = result.normalized;
        }
        Ok(())
    })
}

/// Upper bound on the return difference induced by switching policies,
/// given the largest absolute per-round reward, the summed per-round policy
/// divergence, and the discount factor (`0 <= gamma < 1`).
#[no_mangle]
pub unsafe extern "C" fn reled_nonstationarity_bound(
    max_abs_reward: f64,
    divergence_sum: f64,
    gamma: f64,
    out_bound: *mut f64,
) -> ReledStatus {
    run(move || {
        let value = nonstationarity_bound(max_abs_reward, divergence_sum, gamma)
            .map_err(|e| fail(ReledStatus::InvalidArgument, e))?;
        *out_slot(out_bound, "out_bound")? = value;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_reports_panics_with_their_message() {
        let status = run(|| panic!("boom at the boundary"));
        assert_eq!(status, ReledStatus::Panic);
        let text = LAST_ERROR.with(|slot| slot.borrow().to_str().unwrap().to_string());
        assert!(text.contains("boom at the boundary"), "got: {text}");
    }

    #[test]
    fn fail_strips_interior_nul_bytes() {
        let status = fail(ReledStatus::Io, "before\0after");
        assert_eq!(status, ReledStatus::Io);
        let text = LAST_ERROR.with(|slot| slot.borrow().to_str().unwrap().to_string());
        assert_eq!(text, "before after");
    }
}
