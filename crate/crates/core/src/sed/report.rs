//! Structured feedback assembled after each demonstration round.
//!
//! The report is what flows back to the planner for the next refinement: a
//! worst-first list of instructions that hurt bystanders, a worst-first list
//! of instructions that forced steered agents far from their own policies,
//! the resulting objective-shift bound, and per-agent outcomes. It
//! serializes to JSON losslessly so it can be logged and replayed.

use super::instruction::Instruction;
use super::pairs::{PdiEntry, RewardVolatility};
use super::rollout::{InstructionOutcome, RolloutResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RviRecord {
    pub round: u64,
    pub agent: usize,
    pub instruction_index: usize,
    pub instruction: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdiRecord {
    pub agent: usize,
    /// `None` when the divergence is unbounded (the policy gave the executed
    /// action probability zero).
    pub divergence: Option<f64>,
    pub saturated: bool,
    pub round: u64,
    pub instruction_index: Option<usize>,
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: usize,
    pub arrived: bool,
    pub episode_reward: f64,
    pub travel_time: u64,
    /// Instructions that failed to compile or execute, as display text with
    /// the failure reason.
    pub failures: Vec<String>,
    pub truncated_instructions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFeedback {
    pub agents: Vec<usize>,
    /// Largest bystander reward magnitude seen in ordinary rollouts; the
    /// violation cutoff.
    pub reward_threshold: f64,
    /// Sorted worst (largest magnitude) first.
    pub reward_volatility: Vec<RviRecord>,
    /// Sorted worst (saturated, then largest divergence) first.
    pub policy_divergence: Vec<PdiRecord>,
    /// `None` when any steered agent saturated, making the bound infinite.
    pub bound: Option<f64>,
    pub outcomes: Vec<AgentOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub epoch: u64,
    pub subsets: Vec<SubsetFeedback>,
}

impl FeedbackReport {
    pub fn is_clean(&self) -> bool {
        self.subsets.iter().all(|s| {
            s.reward_volatility.is_empty()
                && s.policy_divergence.iter().all(|p| !p.saturated)
                && s.outcomes.iter().all(|o| o.failures.is_empty())
        })
    }
}

/// Everything known about one steered subset after its demonstration
/// rollout.
pub struct SubsetAnalysis<'a> {
    pub agents: &'a [usize],
    pub volatility: &'a RewardVolatility,
    pub divergence: &'a [PdiEntry],
    pub bound: f64,
    pub demonstration: &'a RolloutResult,
    pub programs: &'a BTreeMap<usize, Vec<Instruction>>,
}

pub fn build_feedback_report(epoch: u64, subsets: &[SubsetAnalysis]) -> FeedbackReport {
    let subsets = subsets
        .iter()
        .map(|a| {
            let mut rvi: Vec<RviRecord> = a
                .volatility
                .pairs
                .iter()
                .map(|p| RviRecord {
                    round: p.round,
                    agent: p.agent,
                    instruction_index: p.instruction_index,
                    instruction: p.instruction.to_string(),
                    magnitude: p.magnitude,
                })
                .collect();
            rvi.sort_by(|x, y| {
                y.magnitude
                    .total_cmp(&x.magnitude)
                    .then(x.round.cmp(&y.round))
                    .then(x.agent.cmp(&y.agent))
            });

            let mut pdi: Vec<PdiRecord> = a
                .divergence
                .iter()
                .map(|e| PdiRecord {
                    agent: e.agent,
                    divergence: e.divergence.is_finite().then_some(e.divergence),
                    saturated: e.saturated,
                    round: e.round,
                    instruction_index: e.instruction_index,
                    instruction: e.instruction.as_ref().map(|i| i.to_string()),
                })
                .collect();
            pdi.sort_by(|x, y| {
                let kx = (!x.saturated, -x.divergence.unwrap_or(f64::INFINITY));
                let ky = (!y.saturated, -y.divergence.unwrap_or(f64::INFINITY));
                kx.0.cmp(&ky.0)
                    .then(kx.1.total_cmp(&ky.1))
                    .then(x.agent.cmp(&y.agent))
            });

            let outcomes = a
                .agents
                .iter()
                .map(|&agent| {
                    let traj = &a.demonstration.trajectories[agent];
                    let mut failures = Vec::new();
                    let mut truncated = 0usize;
                    for ev in &a.demonstration.instruction_events {
                        if ev.agent != agent {
                            continue;
                        }
                        match &ev.outcome {
                            InstructionOutcome::Failed { reason } => {
                                failures.push(format!("{}: {reason}", ev.instruction));
                            }
                            InstructionOutcome::Route { truncated: true, .. } => truncated += 1,
                            _ => {}
                        }
                    }
                    AgentOutcome {
                        agent,
                        arrived: traj.arrived,
                        episode_reward: traj.episode_reward,
                        travel_time: traj.travel_time,
                        failures,
                        truncated_instructions: truncated,
                    }
                })
                .collect();

            SubsetFeedback {
                agents: a.agents.to_vec(),
                reward_threshold: a.volatility.threshold,
                reward_volatility: rvi,
                policy_divergence: pdi,
                bound: a.bound.is_finite().then_some(a.bound),
                outcomes,
            }
        })
        .collect();
    FeedbackReport { epoch, subsets }
}
