//! Expert-demonstration engine: instruction execution, mixed rollouts, and
//! the analytics that grade demonstrations (reward volatility, policy
//! divergence, and the non-stationarity bound).

mod instruction;
mod pairs;
mod report;
mod rollout;

pub use instruction::{
    compile_instruction, CompileError, CompileOutcome, Instruction, QueryResult, Verb,
    DEFAULT_INSTRUCTION_CAP,
};
pub use pairs::{
    nonstationarity_bound, partition_agents, policy_divergence_pairs, reward_volatility_pairs,
    PdiEntry, RewardVolatility, RviPair,
};
pub use report::{
    build_feedback_report, AgentOutcome, FeedbackReport, PdiRecord, RviRecord, SubsetAnalysis,
    SubsetFeedback,
};
pub use rollout::{
    rollout, ActionSelection, InstructionEvent, InstructionOutcome, RolloutRequest, RolloutResult,
};

use crate::policy::PolicyError;
use crate::roadnet::EnvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SedError {
    #[error("cannot split {agents} agents into {subsets} subsets")]
    BadPartition { agents: usize, subsets: usize },
    #[error("{policies} policies supplied for {agents} agents")]
    PolicyCount { policies: usize, agents: usize },
    #[error("instruction program references agent {0} outside the scenario")]
    UnknownAgent(usize),
    #[error("rollout produced no decision rounds")]
    EmptyRollout,
    #[error("gamma {0} must lie in [0, 1)")]
    BadGamma(f64),
    #[error("reward magnitude {0} must be finite and >= 0")]
    BadMagnitude(f64),
    #[error("divergence sum {0} must be >= 0")]
    BadDivergence(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
