//! Demonstration quality analytics.
//!
//! A demonstration round steers one subset of agents by instructions while
//! the rest act from their policies. Two diagnostics grade the outcome from
//! the non-steered agents' point of view: reward-volatility pairs flag the
//! instructions active when the bystanders' summed reward dropped below
//! anything seen in ordinary rollouts, and policy-divergence pairs measure
//! how far each steered agent was pushed from its own policy. Both feed a
//! closed-form bound on how much the bystanders' objective can shift.

use super::instruction::Instruction;
use super::rollout::RolloutResult;
use super::SedError;
use crate::policy::PolicyEval;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// Splits agents `0..n` into `subsets` disjoint groups of near-equal size
/// (sizes differ by at most one) with uniformly shuffled membership.
pub fn partition_agents(
    n: usize,
    subsets: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<usize>>, SedError> {
    if subsets == 0 || subsets > n {
        return Err(SedError::BadPartition { agents: n, subsets });
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let base = n / subsets;
    let extra = n % subsets;
    let mut out = Vec::with_capacity(subsets);
    let mut cursor = 0;
    for s in 0..subsets {
        let size = base + usize::from(s < extra);
        out.push(ids[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(out)
}

/// One flagged (bystander reward drop, active instruction) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RviPair {
    pub round: u64,
    pub agent: usize,
    pub instruction_index: usize,
    pub instruction: Instruction,
    /// `|r|` of the bystander reward sum at the flagged round.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVolatility {
    /// Largest absolute bystander reward seen in the reference rollouts.
    pub threshold: f64,
    /// Rounds of the demonstration rollout whose bystander reward fell
    /// strictly below `-threshold`.
    pub violation_rounds: Vec<u64>,
    pub pairs: Vec<RviPair>,
}

/// Flags demonstration rounds where the steered subset hurt bystanders
/// beyond anything the reference (policy-only) rollouts produced, pairing
/// each flagged round with the instructions active there. The comparison is
/// strict: a drop exactly at the threshold is not a violation.
pub fn reward_volatility_pairs(
    demonstration: &RolloutResult,
    reference: &[&RolloutResult],
    subset: &[usize],
    programs: &BTreeMap<usize, Vec<Instruction>>,
) -> Result<RewardVolatility, SedError> {
    if demonstration.reward_matrix.is_empty()
        || reference.iter().all(|r| r.reward_matrix.is_empty())
        || reference.is_empty()
    {
        return Err(SedError::EmptyRollout);
    }

    let mut threshold: f64 = 0.0;
    for rollout in reference {
        for r in rollout.external_rewards(subset) {
            threshold = threshold.max(r.abs());
        }
    }

    let external = demonstration.external_rewards(subset);
    let mut violation_rounds = Vec::new();
    let mut pairs = Vec::new();
    for (t, &r) in external.iter().enumerate() {
        if r < -threshold {
            let round = t as u64;
            violation_rounds.push(round);
            for &agent in subset {
                let Some(trace) = demonstration.instruction_traces.get(&agent) else { continue };
                let Some(Some(idx)) = trace.get(t) else { continue };
                let Some(program) = programs.get(&agent) else { continue };
                pairs.push(RviPair {
                    round,
                    agent,
                    instruction_index: *idx,
                    instruction: program[*idx].clone(),
                    magnitude: r.abs(),
                });
            }
        }
    }
    Ok(RewardVolatility { threshold, violation_rounds, pairs })
}

/// Worst-step policy divergence for one steered agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PdiEntry {
    pub agent: usize,
    /// `max_t ln(1 / pi(u_t | o_t))` over the agent's demonstration steps;
    /// equals the KL divergence from the step's action point mass to the
    /// policy, maximized over steps.
    pub divergence: f64,
    /// Round of the maximizing step (first occurrence on ties).
    pub round: u64,
    pub step_index: usize,
    /// Instruction active at the maximizing step, if any.
    pub instruction_index: Option<usize>,
    pub instruction: Option<Instruction>,
    /// True when the policy assigned probability zero to the executed
    /// action, making the divergence infinite.
    pub saturated: bool,
}

/// Computes, per steered agent, the largest per-step divergence between the
/// executed action and the agent's current policy. Agents without steps are
/// omitted.
pub fn policy_divergence_pairs<P: PolicyEval>(
    demonstration: &RolloutResult,
    policies: &[P],
    subset: &[usize],
    programs: &BTreeMap<usize, Vec<Instruction>>,
) -> Result<Vec<PdiEntry>, SedError> {
    if policies.len() != demonstration.trajectories.len() {
        return Err(SedError::PolicyCount {
            policies: policies.len(),
            agents: demonstration.trajectories.len(),
        });
    }
    let mut out = Vec::new();
    for &agent in subset {
        let traj = &demonstration.trajectories[agent];
        if traj.steps.is_empty() {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (s, step) in traj.steps.iter().enumerate() {
            let lp = policies[agent].action_log_prob(&step.obs, step.action)?;
            let term = if lp.is_finite() { -lp } else { f64::INFINITY };
            if best.map_or(true, |(b, _)| term > b) {
                best = Some((term, s));
            }
        }
        let (divergence, step_index) = best.expect("non-empty steps");
        let round = traj.steps[step_index].round;
        let instruction_index = demonstration
            .instruction_traces
            .get(&agent)
            .and_then(|trace| trace.get(round as usize).copied().flatten());
        let instruction = instruction_index
            .and_then(|idx| programs.get(&agent).and_then(|p| p.get(idx)).cloned());
        out.push(PdiEntry {
            agent,
            divergence,
            round,
            step_index,
            instruction_index,
            instruction,
            saturated: divergence.is_infinite(),
        });
    }
    Ok(out)
}

/// Upper bound on the bystander objective shift caused by swapping the
/// steered agents' policies:
/// `sqrt(2) / (1 - gamma)^2 * max_abs_reward * divergence_sum`.
pub fn nonstationarity_bound(
    max_abs_reward: f64,
    divergence_sum: f64,
    gamma: f64,
) -> Result<f64, SedError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(SedError::BadGamma(gamma));
    }
    if !max_abs_reward.is_finite() || max_abs_reward < 0.0 {
        return Err(SedError::BadMagnitude(max_abs_reward));
    }
    if divergence_sum.is_nan() || divergence_sum < 0.0 {
        return Err(SedError::BadDivergence(divergence_sum));
    }
    let scale = std::f64::consts::SQRT_2 / ((1.0 - gamma) * (1.0 - gamma));
    Ok(scale * max_abs_reward * divergence_sum)
}
