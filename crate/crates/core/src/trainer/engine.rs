//! The training loop: rollout collection, periodic demonstration rounds,
//! and minibatch parameter updates.
//!
//! Both training modes share one update path. The demonstration machinery
//! only ever adds expert samples and analytics on top of it, so a run whose
//! schedule never reaches a demonstration epoch is bit-identical to a plain
//! independent-learner run with the same seed.

use super::losses::{accumulate_minibatch_grad, hybrid_alpha, Sample};
use super::{TrainerConfig, TrainerError};
use crate::oracle::{
    build_system_prompt, feedback_request, initial_request, parse_program, InstructionOracle,
    PromptContext,
};
use crate::policy::{Adam, PolicyBundle, PolicyNet, ValueNet};
use crate::roadnet::{NavEnv, RoadNetwork, Scenario};
use crate::sed::{
    build_feedback_report, nonstationarity_bound, partition_agents, policy_divergence_pairs,
    reward_volatility_pairs, rollout, ActionSelection, FeedbackReport, Instruction,
    InstructionOutcome, RewardVolatility, RolloutRequest, RolloutResult, SubsetAnalysis,
};
use crate::trajectory::{advantages, bootstrapped_returns, trajectory_dtw, Trajectory};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

// Independent RNG streams derived from the run seed. Optional machinery
// (demonstrations, evaluation) draws from its own stream, so enabling it
// cannot shift the draws seen elsewhere.
const STREAM_INIT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_ENV: u64 = 4;
const STREAM_EVAL: u64 = 5;

/// Policy-only rollouts used as the volatility reference in standalone
/// demonstration grading, where no training epoch supplies them.
const QUALITY_REFERENCE_EPISODES: usize = 3;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Hybrid training with periodic planner demonstrations.
    Reled,
    /// Independent learners; the planner is never contacted.
    Ippo,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Reled => write!(f, "reled"),
            TrainMode::Ippo => write!(f, "ippo"),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reled" => Ok(TrainMode::Reled),
            "ippo" => Ok(TrainMode::Ippo),
            other => Err(format!("unknown mode {other:?}, expected reled or ippo")),
        }
    }
}

pub const METRICS_HEADER: &str =
    "epoch,agent_id,mean_reward,mean_travel_time,alpha,dtw,rvi_count,pdi_max,bound_value,wall_clock_s";

/// One metrics line per agent per epoch. Columns without a defined value
/// (no demonstration yet, no flagged instructions) hold NaN; counts hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: u32,
    pub agent_id: usize,
    pub mean_reward: f64,
    pub mean_travel_time: f64,
    pub alpha: f64,
    /// Normalized warping distance between the epoch's greedy probe rollout
    /// and the stored demonstration, in mean-edge-length units (the exact
    /// value the mixing weight saw); NaN without a demonstration.
    pub dtw: f64,
    /// Coordinate-unit warp cost companion to `dtw`; logged but not a CSV
    /// column.
    pub dtw_raw: f64,
    pub rvi_count: usize,
    pub pdi_max: f64,
    pub bound_value: f64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.agent_id,
            self.mean_reward,
            self.mean_travel_time,
            self.alpha,
            self.dtw,
            self.rvi_count,
            self.pdi_max,
            self.bound_value,
            self.wall_clock_s
        )
    }
}

/// Transcript entry for one demonstration round: the exchange with the
/// planner, instruction accounting, and the feedback sent back next time.
#[derive(Debug, Clone, Serialize)]
pub struct DemoRound {
    pub epoch: u32,
    pub oracle_label: String,
    pub request: String,
    /// None when the planner never produced a reply.
    pub reply: Option<String>,
    pub inference_s: f64,
    /// Failure description when the round degraded to policy-only training.
    pub unavailable: Option<String>,
    pub attempted_units: usize,
    pub parse_failures: usize,
    /// Parsed instructions discarded for naming agents outside the scenario.
    pub dropped_units: usize,
    pub compile_failures: usize,
    /// Percent of attempted units that parsed, named a known agent, and did
    /// not fail compilation; None when the planner never replied.
    pub execution_rate: Option<f64>,
    pub report: FeedbackReport,
}

/// Everything one epoch produced, for logging.
#[derive(Debug)]
pub struct EpochReport {
    pub epoch: u32,
    pub rows: Vec<MetricsRow>,
    pub demo: Option<DemoRound>,
    /// The epoch's own-policy episodes, in collection order.
    pub episodes: Vec<RolloutResult>,
    /// Steered trajectories from this epoch's demonstration round, if any.
    pub demo_trajectories: Vec<Trajectory>,
}

/// Greedy evaluation summary for one agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalStat {
    pub agent: usize,
    pub episodes: u32,
    pub mean_reward: f64,
    pub sd_reward: f64,
    pub mean_travel_time: f64,
    pub sd_travel_time: f64,
    pub arrival_rate: f64,
}

/// One refinement round in a standalone demonstration-quality probe. Fields
/// are None when the planner was unavailable (or, for the warping distance,
/// when no baseline from round zero exists).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoQualityCell {
    pub refinement: u32,
    pub execution_rate: Option<f64>,
    pub mean_reward: Option<f64>,
    pub inference_s: Option<f64>,
    /// Mean raw warping distance of steered trajectories against the same
    /// agents' round-zero demonstrations.
    pub dtw_from_initial: Option<f64>,
}

pub struct Trainer {
    config: TrainerConfig,
    mode: TrainMode,
    env: NavEnv,
    bundles: Vec<PolicyBundle>,
    oracle: Box<dyn InstructionOracle>,
    prompt: PromptContext,
    pending_feedback: Option<FeedbackReport>,
    /// Latest demonstration trajectory per agent; refreshed whenever a
    /// newer round steers the agent, kept across epochs otherwise.
    expert: Vec<Option<Trajectory>>,
    /// Set once the greedy probe has matched the stored demonstration's
    /// episode reward; cleared when a fresh demonstration replaces it. A
    /// matched demonstration stays retired so that one unlucky traffic draw
    /// cannot whipsaw the expert term back into force.
    absorbed: Vec<bool>,
    /// Mean edge length of the network. Warping distances are divided by
    /// this before they reach the mixing weight, so the weight schedule
    /// reacts to "how many hops apart" rather than to the map's coordinate
    /// units (a kilometre-scale map would otherwise pin the weight to 0).
    dtw_scale: f64,
    rng_actions: ChaCha20Rng,
    rng_shuffle: ChaCha20Rng,
    rng_partition: ChaCha20Rng,
    rng_env: ChaCha20Rng,
    epoch: u32,
}

impl Trainer {
    pub fn new(
        network: RoadNetwork,
        scenario: Scenario,
        config: TrainerConfig,
        mode: TrainMode,
        oracle: Box<dyn InstructionOracle>,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        let n = scenario.agents.len();
        if config.subsets > n {
            return Err(TrainerError::Config(format!(
                "{} subsets cannot partition {} agents",
                config.subsets, n
            )));
        }
        let system = build_system_prompt(&network, &scenario);
        let scale = id_scale(&network);
        let mean_edge = network.mean_edge_length();
        let dtw_scale = if mean_edge > 0.0 { mean_edge } else { 1.0 };
        let m_out = network.max_out_degree();
        let mut rng_init = stream(config.seed, STREAM_INIT);
        let bundles = (0..n)
            .map(|_| PolicyBundle::new(m_out, scale, config.learning_rate, &mut rng_init))
            .collect();
        let env = NavEnv::new(network, scenario)?;
        Ok(Trainer {
            prompt: PromptContext::new(system),
            pending_feedback: None,
            expert: vec![None; n],
            absorbed: vec![false; n],
            dtw_scale,
            rng_actions: stream(config.seed, STREAM_ACTIONS),
            rng_shuffle: stream(config.seed, STREAM_SHUFFLE),
            rng_partition: stream(config.seed, STREAM_PARTITION),
            rng_env: stream(config.seed, STREAM_ENV),
            epoch: 0,
            config,
            mode,
            env,
            bundles,
            oracle,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn env(&self) -> &NavEnv {
        &self.env
    }

    pub fn bundles(&self) -> &[PolicyBundle] {
        &self.bundles
    }

    pub fn bundles_mut(&mut self) -> &mut Vec<PolicyBundle> {
        &mut self.bundles
    }

    pub fn oracle_label(&self) -> &'static str {
        self.oracle.label()
    }

    /// Every learned parameter in a fixed order, for equality checks
    /// between runs.
    pub fn params_snapshot(&self) -> Vec<Vec<f64>> {
        self.bundles
            .iter()
            .map(|b| {
                let mut v = Vec::new();
                v.extend_from_slice(b.policy.params());
                v.extend_from_slice(b.value_agent.params());
                v.extend_from_slice(b.value_expert.params());
                v
            })
            .collect()
    }

    /// Runs epochs from the current position through the configured total,
    /// handing each report to `sink` as it completes.
    pub fn train(&mut self, mut sink: impl FnMut(&EpochReport)) -> Result<(), TrainerError> {
        while self.epoch < self.config.epochs {
            let report = self.run_epoch()?;
            sink(&report);
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport, TrainerError> {
        let started = Instant::now();
        self.epoch += 1;
        let k = self.epoch;
        let policies: Vec<PolicyNet> = self.bundles.iter().map(|b| b.policy.clone()).collect();
        let no_programs: BTreeMap<usize, Vec<Instruction>> = BTreeMap::new();

        // Own-policy collection. Whole episodes only; the step quota is a
        // lower bound.
        let mut episodes: Vec<RolloutResult> = Vec::new();
        let mut steps = 0usize;
        let mut first_seed = 0u64;
        while steps < self.config.steps_per_epoch {
            let env_seed: u64 = self.rng_env.gen();
            if episodes.is_empty() {
                first_seed = env_seed;
            }
            self.env.reset(Some(env_seed));
            let result = rollout(
                &mut self.env,
                &RolloutRequest {
                    policies: &policies,
                    programs: &no_programs,
                    selection: ActionSelection::Sample,
                    instruction_cap: self.config.instruction_cap,
                },
                &mut self.rng_actions,
            )?;
            steps += result.trajectories.iter().map(Trajectory::len).sum::<usize>();
            episodes.push(result);
        }

        let (demo, demo_trajectories) =
            if self.mode == TrainMode::Reled && k % self.config.demo_interval == 0 {
                let (round, trajectories) =
                    self.demonstration_round(k, first_seed, &policies, &episodes)?;
                (Some(round), trajectories)
            } else {
                (None, Vec::new())
            };

        // A deterministic greedy probe of the current policy on the epoch's
        // reference seed. Its warping distance from the stored demonstration
        // drives the mixing weight: once the greedy route matches the
        // demonstration the distance is exactly zero, the weight returns to
        // 1, and the expert term retires until the policy drifts again.
        // Sampled rollouts never get there; their exploration noise keeps
        // the distance inflated and the stale expert pressure permanent.
        let probe = if self.mode == TrainMode::Reled && self.expert.iter().any(Option::is_some)
        {
            self.env.reset(Some(first_seed));
            Some(rollout(
                &mut self.env,
                &RolloutRequest {
                    policies: &policies,
                    programs: &no_programs,
                    selection: ActionSelection::Greedy,
                    instruction_cap: self.config.instruction_cap,
                },
                &mut self.rng_actions,
            )?)
        } else {
            None
        };

        let n = self.bundles.len();
        let mut rows = Vec::with_capacity(n);
        for agent in 0..n {
            // The deficit is zero once the greedy route has performed at
            // least as well as the demonstration, even when it is a
            // different (equally good) route: grids have many tied shortest
            // paths, and a demonstration that no longer outperforms the
            // policy has nothing left to teach. Spatial distance alone
            // would keep the expert weight pinned high forever in that
            // case.
            let (dtw, dtw_raw) = match (probe.as_ref(), self.expert[agent].as_ref()) {
                (Some(probe), Some(expert)) if !probe.trajectories[agent].is_empty() => {
                    let traj = &probe.trajectories[agent];
                    let d = trajectory_dtw(traj, expert)?;
                    if traj.episode_reward >= expert.episode_reward {
                        self.absorbed[agent] = true;
                    }
                    let deficit =
                        if self.absorbed[agent] { 0.0 } else { d.normalized / self.dtw_scale };
                    (deficit, d.raw)
                }
                _ => (f64::NAN, f64::NAN),
            };
            let samples = build_samples(
                &self.bundles[agent],
                &episodes,
                self.expert[agent].as_ref(),
                agent,
                self.config.gamma,
            )?;
            let alpha =
                if dtw.is_finite() { hybrid_alpha(k, self.config.epochs, dtw) } else { 1.0 };
            if !samples.is_empty() {
                update_bundle(
                    &mut self.bundles[agent],
                    &samples,
                    alpha,
                    &self.config,
                    &mut self.rng_shuffle,
                )?;
            }
            let count = episodes.len() as f64;
            let mean_reward =
                episodes.iter().map(|e| e.trajectories[agent].episode_reward).sum::<f64>() / count;
            let mean_travel_time =
                episodes.iter().map(|e| e.trajectories[agent].travel_time as f64).sum::<f64>()
                    / count;
            let (rvi_count, pdi_max, bound_value) = demo_columns(demo.as_ref(), agent);
            rows.push(MetricsRow {
                epoch: k,
                agent_id: agent,
                mean_reward,
                mean_travel_time,
                alpha,
                dtw,
                dtw_raw,
                rvi_count,
                pdi_max,
                bound_value,
                wall_clock_s: 0.0,
            });
        }
        if self.config.record_timing {
            let wall = started.elapsed().as_secs_f64();
            for row in &mut rows {
                row.wall_clock_s = wall;
            }
        }
        Ok(EpochReport { epoch: k, rows, demo, episodes, demo_trajectories })
    }

    /// Asks the planner for instructions, executes them on disjoint agent
    /// subsets against the epoch's first seed, grades the outcome, and
    /// stores the steered trajectories for the hybrid objective. A planner
    /// failure degrades to a transcript entry; training continues.
    fn demonstration_round(
        &mut self,
        k: u32,
        env_seed: u64,
        policies: &[PolicyNet],
        episodes: &[RolloutResult],
    ) -> Result<(DemoRound, Vec<Trajectory>), TrainerError> {
        let request = match &self.pending_feedback {
            None => initial_request(),
            Some(report) => feedback_request(report),
        };
        self.prompt.begin_turn(request.clone());
        let reply = match self.oracle.generate(&self.prompt, self.env.network(), self.env.scenario())
        {
            Ok(reply) => reply,
            Err(err) => {
                return Ok((
                    DemoRound {
                        epoch: k,
                        oracle_label: self.oracle.label().to_string(),
                        request,
                        reply: None,
                        inference_s: 0.0,
                        unavailable: Some(err.to_string()),
                        attempted_units: 0,
                        parse_failures: 0,
                        dropped_units: 0,
                        compile_failures: 0,
                        execution_rate: None,
                        report: FeedbackReport { epoch: u64::from(k), subsets: Vec::new() },
                    },
                    Vec::new(),
                ))
            }
        };
        self.prompt.complete_turn(reply.text.clone());

        let reference: Vec<&RolloutResult> = episodes.iter().collect();
        let run = execute_program_text(
            &reply.text,
            u64::from(k),
            &mut self.env,
            policies,
            &reference,
            env_seed,
            &self.config,
            &mut self.rng_partition,
            &mut self.rng_actions,
        )?;
        let mut steered = Vec::new();
        for subset in &run.subsets {
            for &agent in subset.programs.keys() {
                let traj = &subset.result.trajectories[agent];
                if !traj.is_empty() {
                    self.expert[agent] = Some(traj.clone());
                    self.absorbed[agent] = false;
                    steered.push(traj.clone());
                }
            }
        }
        self.pending_feedback = Some(run.report.clone());
        Ok((
            DemoRound {
                epoch: k,
                oracle_label: self.oracle.label().to_string(),
                request,
                reply: Some(reply.text),
                inference_s: reply.inference_time.as_secs_f64(),
                unavailable: None,
                attempted_units: run.attempted_units,
                parse_failures: run.parse_failures,
                dropped_units: run.dropped_units,
                compile_failures: run.compile_failures,
                execution_rate: Some(run.execution_rate),
                report: run.report,
            },
            steered,
        ))
    }
}

fn id_scale(network: &RoadNetwork) -> f64 {
    network.junctions().iter().map(|j| j.id).max().unwrap_or(1).max(1) as f64
}

/// One steered subset of a demonstration round.
struct SubsetRun {
    agents: Vec<usize>,
    volatility: RewardVolatility,
    divergence: Vec<crate::sed::PdiEntry>,
    bound: f64,
    result: RolloutResult,
    programs: BTreeMap<usize, Vec<Instruction>>,
}

struct DemoExecution {
    subsets: Vec<SubsetRun>,
    report: FeedbackReport,
    attempted_units: usize,
    parse_failures: usize,
    dropped_units: usize,
    compile_failures: usize,
    execution_rate: f64,
}

/// Parses planner output and runs one demonstration round: a mixed rollout
/// per non-empty agent subset from the given seed, graded against the
/// reference rollouts. Instructions in skipped (empty) subsets never
/// execute and therefore cannot fail.
#[allow(clippy::too_many_arguments)]
fn execute_program_text(
    text: &str,
    epoch: u64,
    env: &mut NavEnv,
    policies: &[PolicyNet],
    reference: &[&RolloutResult],
    env_seed: u64,
    config: &TrainerConfig,
    rng_partition: &mut ChaCha20Rng,
    rng_actions: &mut ChaCha20Rng,
) -> Result<DemoExecution, TrainerError> {
    let n = env.agent_count();
    let mut program = parse_program(text);
    let parse_failures = program.diagnostics.len();
    let dropped_units = program.retain_known_agents(n);
    let attempted_units = program.attempted_units;

    let mut reference_max = 0.0f64;
    for result in reference {
        for row in &result.reward_matrix {
            for &r in row {
                reference_max = reference_max.max(r.abs());
            }
        }
    }

    let mut subsets: Vec<SubsetRun> = Vec::new();
    let mut compile_failures = 0usize;
    for agents in partition_agents(n, config.subsets, rng_partition)? {
        let programs: BTreeMap<usize, Vec<Instruction>> = agents
            .iter()
            .filter_map(|&a| {
                program
                    .per_agent
                    .get(&a)
                    .filter(|list| !list.is_empty())
                    .map(|list| (a, list.clone()))
            })
            .collect();
        if programs.is_empty() {
            continue;
        }
        env.reset(Some(env_seed));
        let result = rollout(
            env,
            &RolloutRequest {
                policies,
                programs: &programs,
                selection: ActionSelection::Sample,
                instruction_cap: config.instruction_cap,
            },
            rng_actions,
        )?;
        compile_failures += result
            .instruction_events
            .iter()
            .filter(|e| matches!(e.outcome, InstructionOutcome::Failed { .. }))
            .count();

        // The bound needs a reward-magnitude envelope; use the largest seen
        // across the reference and this demonstration.
        let mut max_abs_reward = reference_max;
        for row in &result.reward_matrix {
            for &r in row {
                max_abs_reward = max_abs_reward.max(r.abs());
            }
        }
        let volatility = reward_volatility_pairs(&result, reference, &agents, &programs)?;
        let divergence = policy_divergence_pairs(&result, policies, &agents, &programs)?;
        let divergence_sum: f64 = divergence.iter().map(|d| d.divergence).sum();
        let bound = nonstationarity_bound(max_abs_reward, divergence_sum, config.gamma)?;
        subsets.push(SubsetRun { agents, volatility, divergence, bound, result, programs });
    }

    let analyses: Vec<SubsetAnalysis> = subsets
        .iter()
        .map(|s| SubsetAnalysis {
            agents: &s.agents,
            volatility: &s.volatility,
            divergence: &s.divergence,
            bound: s.bound,
            demonstration: &s.result,
            programs: &s.programs,
        })
        .collect();
    let report = build_feedback_report(epoch, &analyses);

    let successful = attempted_units - parse_failures - dropped_units - compile_failures;
    let execution_rate = if attempted_units == 0 {
        100.0
    } else {
        100.0 * successful as f64 / attempted_units as f64
    };
    Ok(DemoExecution {
        subsets,
        report,
        attempted_units,
        parse_failures,
        dropped_units,
        compile_failures,
        execution_rate,
    })
}

/// Demonstration-derived metrics columns for one agent: flagged-instruction
/// count, worst divergence, and the subset bound. NaN/0 without a
/// successful round.
fn demo_columns(demo: Option<&DemoRound>, agent: usize) -> (usize, f64, f64) {
    let Some(demo) = demo else { return (0, f64::NAN, f64::NAN) };
    let mut rvi = 0usize;
    let mut pdi = f64::NAN;
    let mut bound = f64::NAN;
    for subset in &demo.report.subsets {
        rvi += subset.reward_volatility.iter().filter(|r| r.agent == agent).count();
        for record in &subset.policy_divergence {
            if record.agent == agent {
                let d = record.divergence.unwrap_or(f64::INFINITY);
                pdi = if pdi.is_nan() { d } else { pdi.max(d) };
            }
        }
        if subset.agents.contains(&agent) {
            bound = subset.bound.unwrap_or(f64::INFINITY);
        }
    }
    (rvi, pdi, bound)
}

/// Builds the epoch's update samples for one agent: all of its own steps
/// plus the stored demonstration, each class judged by its own value head,
/// advantages standardized over the combined batch.
fn build_samples(
    bundle: &PolicyBundle,
    episodes: &[RolloutResult],
    expert: Option<&Trajectory>,
    agent: usize,
    gamma: f64,
) -> Result<Vec<Sample>, TrainerError> {
    let mut samples = Vec::new();
    for episode in episodes {
        let traj = &episode.trajectories[agent];
        if traj.is_empty() {
            continue;
        }
        push_class(&mut samples, traj, &bundle.value_agent, gamma, None)?;
    }
    if let Some(expert) = expert {
        push_class(&mut samples, expert, &bundle.value_expert, gamma, Some(&bundle.policy))?;
    }
    normalize_advantages(&mut samples);
    Ok(samples)
}

/// Standardizes advantages over one agent's epoch batch, both sample
/// classes together. The value heads lag the return scale for many epochs,
/// which would otherwise leave every advantage positive and reduce the
/// clipped surrogate to undifferentiated reinforcement of whatever was
/// sampled.
fn normalize_advantages(samples: &mut [Sample]) {
    let n = samples.len();
    if n < 2 {
        return;
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd <= 1e-8 {
        return;
    }
    for s in samples.iter_mut() {
        s.advantage = (s.advantage - mean) / sd;
    }
}

/// Converts one trajectory into update samples. `anchor` is Some for a
/// persisted demonstration: its steps were forced rather than drawn from
/// any policy, and the trajectory may be several epochs old, so the
/// importance ratio is anchored at the policy entering this epoch instead
/// of at whatever the policy assigned back when the rollout ran. Anchoring
/// at stale log-probs lets the ratio drift orders of magnitude outside the
/// clip window, where positive-advantage steps stop contributing gradient
/// and negative-advantage steps push the policy away from the expert.
fn push_class(
    samples: &mut Vec<Sample>,
    traj: &Trajectory,
    value: &ValueNet,
    gamma: f64,
    anchor: Option<&PolicyNet>,
) -> Result<(), TrainerError> {
    if traj.is_empty() {
        return Ok(());
    }
    let expert = anchor.is_some();
    let boot = if traj.arrived { 0.0 } else { value.value(&traj.final_obs)? };
    let returns = bootstrapped_returns(traj, gamma, |_| boot)?;
    let values: Vec<f64> =
        traj.steps.iter().map(|s| value.value(&s.obs)).collect::<Result<_, _>>()?;
    let advs = advantages(&returns, &values)?;
    for ((step, ret), adv) in traj.steps.iter().zip(&returns).zip(&advs) {
        let old_log_prob = match anchor {
            Some(policy) => policy.distribution(&step.obs)?.log_prob(step.action)?,
            None => step.log_prob,
        };
        // Forced steps the anchor policy gives probability zero have no
        // usable ratio; they are exactly the saturated steps the
        // divergence analytics already flag.
        if expert && !old_log_prob.is_finite() {
            continue;
        }
        samples.push(Sample {
            obs: step.obs.clone(),
            action: step.action,
            old_log_prob,
            ret: *ret,
            advantage: *adv,
            expert,
        });
    }
    Ok(())
}

/// Runs the configured passes of shuffled minibatch ascent on one agent's
/// policy and value heads.
fn update_bundle(
    bundle: &mut PolicyBundle,
    samples: &[Sample],
    alpha: f64,
    config: &TrainerConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(), TrainerError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut pgrad = vec![0.0; bundle.policy.param_count()];
    let mut vgrad = vec![0.0; bundle.value_agent.param_count()];
    for _ in 0..config.update_passes {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            pgrad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_minibatch_grad(
                &bundle.policy,
                &batch,
                alpha,
                config.clip,
                config.entropy_coeff,
                &mut pgrad,
            )?;
            // The objective is maximized; Adam descends.
            pgrad.iter_mut().for_each(|g| *g = -*g);
            bundle.opt_policy.step(bundle.policy.params_mut(), &pgrad)?;

            value_step(
                &mut bundle.value_agent,
                &mut bundle.opt_value_agent,
                batch.iter().copied().filter(|s| !s.expert),
                &mut vgrad,
            )?;
            value_step(
                &mut bundle.value_expert,
                &mut bundle.opt_value_expert,
                batch.iter().copied().filter(|s| s.expert),
                &mut vgrad,
            )?;
        }
    }
    Ok(())
}

/// One squared-error descent step on a value head over `batch`.
fn value_step<'a>(
    net: &mut ValueNet,
    opt: &mut Adam,
    batch: impl Iterator<Item = &'a Sample>,
    grad: &mut [f64],
) -> Result<(), TrainerError> {
    let batch: Vec<&Sample> = batch.collect();
    if batch.is_empty() {
        return Ok(());
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let m = batch.len() as f64;
    for s in &batch {
        let v = net.value(&s.obs)?;
        net.accumulate_value_grad(&s.obs, 2.0 * (v - s.ret) / m, grad)?;
    }
    opt.step(net.params_mut(), grad)?;
    Ok(())
}

/// Greedy evaluation over freshly seeded episodes. Draws episode seeds from
/// the evaluation stream of `seed`; greedy action choice consumes no draws,
/// so results depend only on the parameters and the seed.
pub fn evaluate(
    env: &mut NavEnv,
    bundles: &[PolicyBundle],
    episodes: u32,
    seed: u64,
) -> Result<Vec<EvalStat>, TrainerError> {
    if episodes == 0 {
        return Err(TrainerError::Config("evaluation needs at least one episode".into()));
    }
    let n = env.agent_count();
    if bundles.len() != n {
        return Err(TrainerError::Config(format!(
            "{} policy bundles supplied for {} agents",
            bundles.len(),
            n
        )));
    }
    let policies: Vec<PolicyNet> = bundles.iter().map(|b| b.policy.clone()).collect();
    let no_programs: BTreeMap<usize, Vec<Instruction>> = BTreeMap::new();
    let mut rng_env = stream(seed, STREAM_EVAL);
    let mut rng_actions = stream(seed, STREAM_ACTIONS);
    let mut rewards = vec![Vec::with_capacity(episodes as usize); n];
    let mut travels = vec![Vec::with_capacity(episodes as usize); n];
    let mut arrivals = vec![0u32; n];
    for _ in 0..episodes {
        env.reset(Some(rng_env.gen()));
        let result = rollout(
            env,
            &RolloutRequest {
                policies: &policies,
                programs: &no_programs,
                selection: ActionSelection::Greedy,
                instruction_cap: crate::sed::DEFAULT_INSTRUCTION_CAP,
            },
            &mut rng_actions,
        )?;
        for agent in 0..n {
            rewards[agent].push(result.trajectories[agent].episode_reward);
            travels[agent].push(result.trajectories[agent].travel_time as f64);
            arrivals[agent] += u32::from(result.trajectories[agent].arrived);
        }
    }
    Ok((0..n)
        .map(|agent| {
            let (mean_reward, sd_reward) = mean_sd(&rewards[agent]);
            let (mean_travel_time, sd_travel_time) = mean_sd(&travels[agent]);
            EvalStat {
                agent,
                episodes,
                mean_reward,
                sd_reward,
                mean_travel_time,
                sd_travel_time,
                arrival_rate: f64::from(arrivals[agent]) / f64::from(episodes),
            }
        })
        .collect())
}

/// Mean and sample standard deviation; zero deviation below two points.
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standalone demonstration-quality probe: repeated planner rounds against
/// fixed, untrained policies, each graded like a training demonstration.
/// Returns one cell per round (the initial request plus `refinements`
/// feedback rounds) and the full transcript. Planner failures leave an
/// empty cell and carry the previous feedback into the next round.
pub fn demo_quality(
    network: RoadNetwork,
    scenario: Scenario,
    config: &TrainerConfig,
    oracle: &mut dyn InstructionOracle,
    refinements: u32,
) -> Result<(Vec<DemoQualityCell>, Vec<DemoRound>), TrainerError> {
    config.validate()?;
    let n = scenario.agents.len();
    if config.subsets > n {
        return Err(TrainerError::Config(format!(
            "{} subsets cannot partition {} agents",
            config.subsets, n
        )));
    }
    let system = build_system_prompt(&network, &scenario);
    let scale = id_scale(&network);
    let m_out = network.max_out_degree();
    let mut rng_init = stream(config.seed, STREAM_INIT);
    let policies: Vec<PolicyNet> =
        (0..n).map(|_| PolicyNet::new(m_out, scale, &mut rng_init)).collect();
    let mut env = NavEnv::new(network, scenario)?;
    let mut rng_actions = stream(config.seed, STREAM_ACTIONS);
    let mut rng_partition = stream(config.seed, STREAM_PARTITION);
    let mut rng_env = stream(config.seed, STREAM_ENV);
    let mut prompt = PromptContext::new(system);
    let no_programs: BTreeMap<usize, Vec<Instruction>> = BTreeMap::new();

    let demo_seed: u64 = rng_env.gen();
    let mut reference_results = Vec::with_capacity(QUALITY_REFERENCE_EPISODES);
    for i in 0..QUALITY_REFERENCE_EPISODES {
        let seed = if i == 0 { demo_seed } else { rng_env.gen() };
        env.reset(Some(seed));
        reference_results.push(rollout(
            &mut env,
            &RolloutRequest {
                policies: &policies,
                programs: &no_programs,
                selection: ActionSelection::Sample,
                instruction_cap: config.instruction_cap,
            },
            &mut rng_actions,
        )?);
    }
    let reference: Vec<&RolloutResult> = reference_results.iter().collect();

    let mut pending: Option<FeedbackReport> = None;
    let mut initial: BTreeMap<usize, Trajectory> = BTreeMap::new();
    let mut cells = Vec::new();
    let mut rounds = Vec::new();
    for r in 0..=refinements {
        let request = match &pending {
            None => initial_request(),
            Some(report) => feedback_request(report),
        };
        prompt.begin_turn(request.clone());
        let reply = match oracle.generate(&prompt, env.network(), env.scenario()) {
            Ok(reply) => reply,
            Err(err) => {
                cells.push(DemoQualityCell {
                    refinement: r,
                    execution_rate: None,
                    mean_reward: None,
                    inference_s: None,
                    dtw_from_initial: None,
                });
                rounds.push(DemoRound {
                    epoch: r,
                    oracle_label: oracle.label().to_string(),
                    request,
                    reply: None,
                    inference_s: 0.0,
                    unavailable: Some(err.to_string()),
                    attempted_units: 0,
                    parse_failures: 0,
                    dropped_units: 0,
                    compile_failures: 0,
                    execution_rate: None,
                    report: FeedbackReport { epoch: u64::from(r), subsets: Vec::new() },
                });
                continue;
            }
        };
        prompt.complete_turn(reply.text.clone());
        let run = execute_program_text(
            &reply.text,
            u64::from(r),
            &mut env,
            &policies,
            &reference,
            demo_seed,
            config,
            &mut rng_partition,
            &mut rng_actions,
        )?;

        let mut steered_rewards = Vec::new();
        let mut distances = Vec::new();
        for subset in &run.subsets {
            for &agent in subset.programs.keys() {
                let traj = &subset.result.trajectories[agent];
                if traj.is_empty() {
                    continue;
                }
                steered_rewards.push(traj.episode_reward);
                if r == 0 {
                    initial.insert(agent, traj.clone());
                } else if let Some(first) = initial.get(&agent) {
                    distances.push(trajectory_dtw(traj, first)?.raw);
                }
            }
        }
        let mean_reward = (!steered_rewards.is_empty())
            .then(|| steered_rewards.iter().sum::<f64>() / steered_rewards.len() as f64);
        let dtw_from_initial = if r == 0 {
            initial.values().next().map(|_| 0.0)
        } else {
            (!distances.is_empty())
                .then(|| distances.iter().sum::<f64>() / distances.len() as f64)
        };
        cells.push(DemoQualityCell {
            refinement: r,
            execution_rate: Some(run.execution_rate),
            mean_reward,
            inference_s: Some(reply.inference_time.as_secs_f64()),
            dtw_from_initial,
        });
        rounds.push(DemoRound {
            epoch: r,
            oracle_label: oracle.label().to_string(),
            request,
            reply: Some(reply.text),
            inference_s: reply.inference_time.as_secs_f64(),
            unavailable: None,
            attempted_units: run.attempted_units,
            parse_failures: run.parse_failures,
            dropped_units: run.dropped_units,
            compile_failures: run.compile_failures,
            execution_rate: Some(run.execution_rate),
            report: run.report.clone(),
        });
        pending = Some(run.report);
    }
    Ok((cells, rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleError, OracleReply, ScriptedOracle};
    use crate::roadnet::{OdPair, Regime, SCENARIO_FORMAT_VERSION};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn grid() -> RoadNetwork {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/grid5_network.json");
        RoadNetwork::from_file(path).unwrap()
    }

    fn scenario() -> Scenario {
        Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            agents: vec![
                OdPair { origin: 0, destination: 24, departure_step: 0 },
                OdPair { origin: 24, destination: 0, departure_step: 0 },
                OdPair { origin: 4, destination: 20, departure_step: 0 },
                OdPair { origin: 20, destination: 4, departure_step: 0 },
            ],
            background_vehicles: 6,
            regime: Regime::Moderate,
            t_max: 150,
            omega_d: 0.5,
            seed: 5,
        }
    }

    fn quick_config() -> TrainerConfig {
        TrainerConfig {
            epochs: 4,
            steps_per_epoch: 40,
            demo_interval: 2,
            subsets: 2,
            update_passes: 2,
            minibatch: 32,
            seed: 7,
            ..TrainerConfig::default()
        }
    }

    fn run_to_end(mut trainer: Trainer) -> (Vec<EpochReport>, Vec<Vec<f64>>) {
        let mut reports = Vec::new();
        while trainer.epoch() < trainer.config().epochs {
            reports.push(trainer.run_epoch().unwrap());
        }
        let snapshot = trainer.params_snapshot();
        (reports, snapshot)
    }

    struct CountingOracle {
        calls: Arc<AtomicUsize>,
    }

    impl InstructionOracle for CountingOracle {
        fn label(&self) -> &'static str {
            "counting"
        }

        fn generate(
            &mut self,
            ctx: &PromptContext,
            network: &RoadNetwork,
            scenario: &Scenario,
        ) -> Result<OracleReply, OracleError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            ScriptedOracle.generate(ctx, network, scenario)
        }
    }

    struct FailingOracle;

    impl InstructionOracle for FailingOracle {
        fn label(&self) -> &'static str {
            "failing"
        }

        fn generate(
            &mut self,
            _ctx: &PromptContext,
            _network: &RoadNetwork,
            _scenario: &Scenario,
        ) -> Result<OracleReply, OracleError> {
            Err(OracleError::Unavailable { attempts: 3, last: "connection refused".into() })
        }
    }

    #[test]
    fn demonstrations_fire_exactly_on_the_interval() {
        let mut config = quick_config();
        config.epochs = 5;
        let trainer = Trainer::new(
            grid(),
            scenario(),
            config,
            TrainMode::Reled,
            Box::new(ScriptedOracle),
        )
        .unwrap();
        let (reports, _) = run_to_end(trainer);
        let demo_epochs: Vec<u32> =
            reports.iter().filter(|r| r.demo.is_some()).map(|r| r.epoch).collect();
        assert_eq!(demo_epochs, vec![2, 4]);
        for report in &reports {
            if let Some(demo) = &report.demo {
                assert!(demo.unavailable.is_none());
                assert_eq!(demo.execution_rate, Some(100.0));
                assert_eq!(demo.parse_failures, 0);
                assert!(demo.attempted_units >= 4);
            }
        }
        // The demonstration epoch trains against the stored trajectories
        // and later epochs keep them.
        for epoch in [1usize, 2, 4] {
            let rows = &reports[epoch].rows;
            assert!(rows.iter().all(|r| r.dtw.is_finite()), "epoch {}", epoch + 1);
            assert!(rows.iter().all(|r| r.alpha > 0.0 && r.alpha <= 1.0));
        }
    }

    #[test]
    fn same_seed_runs_are_identical() {
        let build = || {
            Trainer::new(
                grid(),
                scenario(),
                quick_config(),
                TrainMode::Reled,
                Box::new(ScriptedOracle),
            )
            .unwrap()
        };
        let (reports_a, snap_a) = run_to_end(build());
        let (reports_b, snap_b) = run_to_end(build());
        assert_eq!(snap_a, snap_b);
        let csv = |reports: &[EpochReport]| {
            reports
                .iter()
                .flat_map(|r| r.rows.iter().map(MetricsRow::csv))
                .collect::<Vec<_>>()
        };
        assert_eq!(csv(&reports_a), csv(&reports_b));
    }

    #[test]
    fn independent_mode_never_contacts_the_planner() {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut config = quick_config();
        config.demo_interval = 1;
        let trainer = Trainer::new(
            grid(),
            scenario(),
            config.clone(),
            TrainMode::Ippo,
            Box::new(CountingOracle { calls: Arc::clone(&calls) }),
        )
        .unwrap();
        let (reports, _) = run_to_end(trainer);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        assert!(reports.iter().all(|r| r.demo.is_none()));

        let trainer = Trainer::new(
            grid(),
            scenario(),
            config,
            TrainMode::Reled,
            Box::new(CountingOracle { calls: Arc::clone(&calls) }),
        )
        .unwrap();
        run_to_end(trainer);
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn hybrid_mode_without_demonstrations_matches_independent_mode() {
        let mut config = quick_config();
        config.epochs = 3;
        config.demo_interval = 10;
        let run = |mode| {
            let trainer = Trainer::new(
                grid(),
                scenario(),
                config.clone(),
                mode,
                Box::new(ScriptedOracle),
            )
            .unwrap();
            run_to_end(trainer).1
        };
        assert_eq!(run(TrainMode::Reled), run(TrainMode::Ippo));
    }

    #[test]
    fn metrics_rows_follow_the_column_conventions() {
        let trainer = Trainer::new(
            grid(),
            scenario(),
            quick_config(),
            TrainMode::Reled,
            Box::new(ScriptedOracle),
        )
        .unwrap();
        let (reports, _) = run_to_end(trainer);
        assert_eq!(METRICS_HEADER.split(',').count(), 10);

        // Epoch 1: no demonstration has ever run.
        for row in &reports[0].rows {
            assert_eq!(row.alpha, 1.0);
            assert!(row.dtw.is_nan());
            assert!(row.pdi_max.is_nan());
            assert!(row.bound_value.is_nan());
            assert_eq!(row.rvi_count, 0);
            assert_eq!(row.wall_clock_s, 0.0);
            let line = row.csv();
            assert_eq!(line.split(',').count(), 10);
            assert!(line.contains("NaN"));
        }

        // Epoch 2 ran a demonstration over every agent. The logged distance
        // is exactly what the mixing weight consumed.
        for row in &reports[1].rows {
            assert!(row.dtw.is_finite() && row.dtw >= 0.0);
            assert!(row.dtw_raw >= 0.0);
            assert!(row.pdi_max.is_finite() && row.pdi_max > 0.0);
            assert!(row.bound_value.is_finite() && row.bound_value > 0.0);
            let expected = (-(2.0 / 4.0) * row.dtw).exp();
            assert!((row.alpha - expected).abs() < 1e-12);
        }

        // Epoch 3 keeps the stored demonstration but has no fresh analytics.
        for row in &reports[2].rows {
            assert!(row.dtw.is_finite());
            assert!(row.pdi_max.is_nan());
            assert!(row.bound_value.is_nan());
            assert_eq!(row.rvi_count, 0);
        }
    }

    #[test]
    fn planner_failure_degrades_to_plain_training() {
        let mut config = quick_config();
        config.epochs = 2;
        config.demo_interval = 1;
        let trainer = Trainer::new(
            grid(),
            scenario(),
            config,
            TrainMode::Reled,
            Box::new(FailingOracle),
        )
        .unwrap();
        let (reports, _) = run_to_end(trainer);
        assert_eq!(reports.len(), 2);
        for report in &reports {
            let demo = report.demo.as_ref().unwrap();
            assert!(demo.reply.is_none());
            assert!(demo.unavailable.as_deref().unwrap().contains("connection refused"));
            assert_eq!(demo.execution_rate, None);
            assert!(demo.report.subsets.is_empty());
            for row in &report.rows {
                assert_eq!(row.alpha, 1.0);
                assert!(row.dtw.is_nan());
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_well_formed() {
        let trainer = Trainer::new(
            grid(),
            scenario(),
            quick_config(),
            TrainMode::Ippo,
            Box::new(ScriptedOracle),
        )
        .unwrap();
        let mut env = NavEnv::new(grid(), scenario()).unwrap();
        let stats = evaluate(&mut env, trainer.bundles(), 3, 99).unwrap();
        assert_eq!(stats.len(), 4);
        for stat in &stats {
            assert_eq!(stat.episodes, 3);
            assert!(stat.sd_reward >= 0.0);
            assert!(stat.sd_travel_time >= 0.0);
            assert!((0.0..=1.0).contains(&stat.arrival_rate));
            assert!(stat.mean_travel_time > 0.0);
        }
        let again = evaluate(&mut env, trainer.bundles(), 3, 99).unwrap();
        assert_eq!(stats, again);

        let single = evaluate(&mut env, trainer.bundles(), 1, 99).unwrap();
        assert!(single.iter().all(|s| s.sd_reward == 0.0 && s.sd_travel_time == 0.0));
    }

    #[test]
    fn quality_probe_grades_each_refinement() {
        let config = quick_config();
        let (cells, rounds) =
            demo_quality(grid(), scenario(), &config, &mut ScriptedOracle, 1).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(rounds.len(), 2);
        for (r, cell) in cells.iter().enumerate() {
            assert_eq!(cell.refinement, r as u32);
            assert_eq!(cell.execution_rate, Some(100.0));
            assert!(cell.mean_reward.unwrap().is_finite());
            assert!(cell.inference_s.unwrap() >= 0.0);
            assert!(cell.dtw_from_initial.unwrap() >= 0.0);
        }
        assert_eq!(cells[0].dtw_from_initial, Some(0.0));
        assert!(!rounds[0].report.subsets.is_empty());
        // The second request folds the first round's outcome back to the
        // planner.
        assert!(rounds[1].request.contains("subset"));

        let (cells, rounds) =
            demo_quality(grid(), scenario(), &config, &mut FailingOracle, 1).unwrap();
        assert!(cells.iter().all(|c| c.execution_rate.is_none()
            && c.mean_reward.is_none()
            && c.dtw_from_initial.is_none()));
        assert!(rounds.iter().all(|r| r.unavailable.is_some()));
    }
}
