//! Trajectory records, return/advantage computation, and route similarity.

use crate::roadnet::Observation;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory must contain at least one step")]
    Empty,
    #[error("gamma {0} must lie in [0, 1]")]
    BadGamma(f64),
    #[error("returns ({returns}) and values ({values}) differ in length")]
    LengthMismatch { returns: usize, values: usize },
    #[error("point sequence for dtw must be non-empty")]
    EmptySequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Collected by the agent's own policy.
    Agent,
    /// Collected while the agent followed planner instructions.
    Expert,
}

/// One decision: the observation seen, the edge slot taken, the reward for
/// the round, and bookkeeping for later analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStep {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    /// Log-probability of `action` under the acting policy at collection
    /// time (also recorded when the action came from an instruction).
    pub log_prob: f64,
    /// Global decision round in which the step was taken.
    pub round: u64,
    /// Coordinates of the junction where the decision was made.
    pub position: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: usize,
    pub provenance: Provenance,
    pub steps: Vec<TrajStep>,
    /// Observation at the junction where the episode ended for this agent.
    pub final_obs: Observation,
    pub final_position: (f64, f64),
    /// True when the agent reached its destination; such trajectories need
    /// no bootstrap value.
    pub arrived: bool,
    /// Seconds spent traversing edges.
    pub travel_time: u64,
    /// Total episode reward including any terminal bonus.
    pub episode_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Junction coordinates visited, from the first decision point through
    /// the final junction.
    pub fn visited_points(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.steps.iter().map(|s| s.position).collect();
        pts.push(self.final_position);
        pts
    }
}

/// Discounted returns with a bootstrapped tail:
/// `R_t = sum_k gamma^k r_{t+k} + gamma^(T-t) * V(final_obs)`,
/// where the bootstrap term is dropped for trajectories that terminated by
/// arrival. Computed by backward recursion.
pub fn bootstrapped_returns<F>(
    traj: &Trajectory,
    gamma: f64,
    value_of: F,
) -> Result<Vec<f64>, TrajectoryError>
where
    F: FnOnce(&Observation) -> f64,
{
    if traj.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(TrajectoryError::BadGamma(gamma));
    }
    let mut acc = if traj.arrived { 0.0 } else { value_of(&traj.final_obs) };
    let mut out = vec![0.0; traj.len()];
    for (i, step) in traj.steps.iter().enumerate().rev() {
        acc = step.reward + gamma * acc;
        out[i] = acc;
    }
    Ok(out)
}

/// Elementwise `A_t = R_t - V_t`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>, TrajectoryError> {
    if returns.len() != values.len() {
        return Err(TrajectoryError::LengthMismatch {
            returns: returns.len(),
            values: values.len(),
        });
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// Dynamic time warping alignment between two coordinate sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    /// Total Euclidean cost along the optimal warping path.
    pub raw: f64,
    /// Number of matched pairs on that path.
    pub path_len: usize,
    /// `raw / path_len`; comparable across routes of different lengths.
    pub normalized: f64,
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Classic O(|a| * |b|) dynamic-programming alignment with unit slope
/// weights. The path length is recovered by backtracking with a fixed tie
/// preference (diagonal, then shrinking `a`, then shrinking `b`) so the
/// normalized value is deterministic.
pub fn dtw(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<DtwResult, TrajectoryError> {
    if a.is_empty() || b.is_empty() {
        return Err(TrajectoryError::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let mut cost = vec![f64::INFINITY; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    cost[idx(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let local = euclid(a[i - 1], b[j - 1]);
            let best = cost[idx(i - 1, j - 1)]
                .min(cost[idx(i - 1, j)])
                .min(cost[idx(i, j - 1)]);
            cost[idx(i, j)] = local + best;
        }
    }
    let raw = cost[idx(n, m)];

    let mut path_len = 0usize;
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        path_len += 1;
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = cost[idx(i - 1, j - 1)];
            let up = cost[idx(i - 1, j)];
            let left = cost[idx(i, j - 1)];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
    }
    Ok(DtwResult { raw, path_len, normalized: raw / path_len as f64 })
}

/// DTW between the junction sequences of two trajectories.
pub fn trajectory_dtw(a: &Trajectory, b: &Trajectory) -> Result<DtwResult, TrajectoryError> {
    dtw(&a.visited_points(), &b.visited_points())
}
