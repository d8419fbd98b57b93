//! Episode rollouts with optional instruction control.
//!
//! One engine serves both collection modes: agents follow their policies,
//! and any agent with an instruction program follows compiled routes
//! instead, falling back to its policy when the program is exhausted or an
//! instruction fails. A rollout with no programs is a plain policy rollout.

use super::instruction::{compile_instruction, CompileOutcome, Instruction};
use super::SedError;
use crate::policy::PolicyNet;
use crate::roadnet::NavEnv;
use crate::trajectory::{Provenance, TrajStep, Trajectory};
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    /// Sample from each policy distribution (training).
    Sample,
    /// Take the most probable action (evaluation).
    Greedy,
}

#[derive(Debug, Clone)]
pub struct RolloutRequest<'a> {
    pub policies: &'a [PolicyNet],
    /// Instruction programs keyed by agent id; agents absent here act from
    /// their policies.
    pub programs: &'a BTreeMap<usize, Vec<Instruction>>,
    pub selection: ActionSelection,
    /// Per-instruction action budget cap.
    pub instruction_cap: usize,
}

/// What happened to one instruction when the rollout reached it.
/// Instructions the episode never reached produce no event.
#[derive(Debug, Clone, PartialEq)]
pub enum InstructionOutcome {
    /// Compiled to a route of `budget` edges (possibly zero when already at
    /// the target), cut down if over the cap.
    Route { budget: usize, truncated: bool },
    /// Query verb answered inline.
    Query { result: String },
    /// Compilation failed; the agent moved on to its next instruction.
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionEvent {
    pub agent: usize,
    pub instruction_index: usize,
    pub instruction: String,
    pub outcome: InstructionOutcome,
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// One trajectory per agent, in agent order. Agents that never acted
    /// (for example, a departure delayed past the time limit) have empty
    /// step lists.
    pub trajectories: Vec<Trajectory>,
    /// Reward of every agent at every decision round: `[round][agent]`.
    /// Agents not acting in a round contribute 0.
    pub reward_matrix: Vec<Vec<f64>>,
    /// For each instructed agent: the instruction index driving its action
    /// at each round, `None` for policy-driven, idle, or finished rounds.
    pub instruction_traces: BTreeMap<usize, Vec<Option<usize>>>,
    pub instruction_events: Vec<InstructionEvent>,
    pub rounds: u64,
    pub simulation_time: u64,
}

impl RolloutResult {
    /// Summed per-round reward of every agent outside `subset`.
    pub fn external_rewards(&self, subset: &[usize]) -> Vec<f64> {
        self.reward_matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(i, _)| !subset.contains(i))
                    .map(|(_, r)| r)
                    .sum()
            })
            .collect()
    }
}

struct AgentExec {
    program: Vec<Instruction>,
    next: usize,
    queue: VecDeque<usize>,
    active: Option<usize>,
}

/// Runs the environment from its current (normally freshly reset) state to
/// episode end. The caller owns seeding: reset the env and pass the action
/// RNG explicitly. Policy-driven decisions consume RNG draws in ascending
/// agent order; instruction-driven decisions consume none.
pub fn rollout(
    env: &mut NavEnv,
    req: &RolloutRequest,
    rng: &mut ChaCha20Rng,
) -> Result<RolloutResult, SedError> {
    let n = env.agent_count();
    if req.policies.len() != n {
        return Err(SedError::PolicyCount { policies: req.policies.len(), agents: n });
    }
    for &agent in req.programs.keys() {
        if agent >= n {
            return Err(SedError::UnknownAgent(agent));
        }
    }
    if env.episode_over() {
        return Err(SedError::EmptyRollout);
    }

    let mut execs: BTreeMap<usize, AgentExec> = req
        .programs
        .iter()
        .map(|(&agent, program)| {
            (agent, AgentExec { program: program.clone(), next: 0, queue: VecDeque::new(), active: None })
        })
        .collect();
    let mut events = Vec::new();
    let mut traces: BTreeMap<usize, Vec<Option<usize>>> =
        req.programs.keys().map(|&a| (a, Vec::new())).collect();
    let mut steps: Vec<Vec<TrajStep>> = vec![Vec::new(); n];
    let mut reward_matrix: Vec<Vec<f64>> = Vec::new();
    let mut round: u64 = 0;

    while !env.episode_over() {
        let awaiting = env.awaiting_decision();
        let mut actions: Vec<Option<usize>> = vec![None; n];
        let mut pending_steps: Vec<Option<TrajStep>> = vec![None; n];
        let mut active_instruction: Vec<Option<usize>> = vec![None; n];

        for i in 0..n {
            if !awaiting[i] {
                continue;
            }
            let obs = env.observe(i);
            let position = env.agent_coords(i);
            let dist = req.policies[i].distribution(&obs)?;

            let mut choice: Option<(usize, usize)> = None; // (slot, instruction idx)
            if let Some(exec) = execs.get_mut(&i) {
                refill_queue(exec, i, env, req.instruction_cap, &mut events);
                while let Some(edge_index) = exec.queue.pop_front() {
                    let junction = env.agent_junction(i);
                    let jidx = env.network().junction_index(junction).expect("agent junction");
                    let slot = env
                        .network()
                        .outgoing_indices(jidx)
                        .iter()
                        .position(|&e| e == edge_index);
                    match (slot, exec.active) {
                        (Some(s), Some(idx)) => {
                            choice = Some((s, idx));
                            break;
                        }
                        (maybe_slot, active) => {
                            // Route no longer lines up with the agent's
                            // position; drop it and move to the next
                            // instruction.
                            let idx = active.unwrap_or(0);
                            events.push(InstructionEvent {
                                agent: i,
                                instruction_index: idx,
                                instruction: exec
                                    .program
                                    .get(idx)
                                    .map(|ins| ins.to_string())
                                    .unwrap_or_default(),
                                outcome: InstructionOutcome::Failed {
                                    reason: "route desynchronized from agent position".into(),
                                },
                            });
                            let _ = maybe_slot;
                            exec.queue.clear();
                            refill_queue(exec, i, env, req.instruction_cap, &mut events);
                        }
                    }
                }
            }
            let (slot, active, log_prob) = match choice {
                Some((slot, idx)) => (slot, Some(idx), dist.log_prob(slot)?),
                None => match req.selection {
                    ActionSelection::Sample => {
                        let (slot, lp) = dist.sample(rng);
                        (slot, None, lp)
                    }
                    ActionSelection::Greedy => {
                        let slot = dist.argmax();
                        (slot, None, dist.log_prob(slot)?)
                    }
                },
            };
            actions[i] = Some(slot);
            active_instruction[i] = active;
            pending_steps[i] =
                Some(TrajStep { obs, action: slot, reward: 0.0, log_prob, round, position });
        }

        let outcome = env.step(&actions)?;
        let mut row = vec![0.0; n];
        for i in 0..n {
            row[i] = outcome.agents[i].reward;
            if let Some(mut step) = pending_steps[i].take() {
                step.reward = outcome.agents[i].reward;
                steps[i].push(step);
            }
        }
        reward_matrix.push(row);
        for (&agent, trace) in traces.iter_mut() {
            trace.push(active_instruction[agent]);
        }
        round += 1;
    }

    let trajectories = (0..n)
        .map(|i| {
            let episode_reward: f64 = reward_matrix.iter().map(|row| row[i]).sum();
            Trajectory {
                agent_id: i,
                provenance: if req.programs.contains_key(&i) {
                    Provenance::Expert
                } else {
                    Provenance::Agent
                },
                steps: std::mem::take(&mut steps[i]),
                final_obs: env.observe(i),
                final_position: env.agent_coords(i),
                arrived: env.arrived(i),
                travel_time: env.travel_time(i),
                episode_reward,
            }
        })
        .collect();

    Ok(RolloutResult {
        trajectories,
        reward_matrix,
        instruction_traces: traces,
        instruction_events: events,
        rounds: round,
        simulation_time: env.simulation_time(),
    })
}

/// Compiles instructions from the program cursor until a movement yields a
/// non-empty route. Queries answer inline; failures and empty routes are
/// recorded and skipped.
fn refill_queue(
    exec: &mut AgentExec,
    agent: usize,
    env: &NavEnv,
    cap: usize,
    events: &mut Vec<InstructionEvent>,
) {
    if !exec.queue.is_empty() {
        return;
    }
    exec.active = None;
    while exec.next < exec.program.len() {
        let idx = exec.next;
        exec.next += 1;
        let instruction = exec.program[idx].clone();
        let od = env.scenario().agents[agent];
        let current = env.agent_junction(agent);
        match compile_instruction(&instruction, od, current, env, cap) {
            Ok(CompileOutcome::Route { edges, truncated }) => {
                events.push(InstructionEvent {
                    agent,
                    instruction_index: idx,
                    instruction: instruction.to_string(),
                    outcome: InstructionOutcome::Route { budget: edges.len(), truncated },
                });
                if !edges.is_empty() {
                    exec.queue = edges.into();
                    exec.active = Some(idx);
                    return;
                }
            }
            Ok(CompileOutcome::Query { result }) => {
                events.push(InstructionEvent {
                    agent,
                    instruction_index: idx,
                    instruction: instruction.to_string(),
                    outcome: InstructionOutcome::Query { result: result.to_string() },
                });
            }
            Err(err) => {
                events.push(InstructionEvent {
                    agent,
                    instruction_index: idx,
                    instruction: instruction.to_string(),
                    outcome: InstructionOutcome::Failed { reason: err.to_string() },
                });
            }
        }
    }
}
