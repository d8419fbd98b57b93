//! Hybrid expert-agent policy optimization.
//!
//! Each agent keeps its own policy, two value heads (one for its own
//! rollouts, one for demonstration rollouts), and Adam state. Training
//! alternates plain collection epochs with periodic demonstration rounds
//! whose trajectories enter the policy objective at a weight steered by how
//! far the demonstration strays from the agent's own behaviour.

mod engine;
mod losses;

pub use engine::{
    demo_quality, evaluate, DemoQualityCell, DemoRound, EpochReport, EvalStat, MetricsRow,
    TrainMode, Trainer, METRICS_HEADER,
};
pub(crate) use engine::mean_sd;
pub use losses::{
    accumulate_minibatch_grad, clipped_surrogate, hybrid_alpha, hybrid_loss,
    minibatch_objective, value_loss, Sample,
};

use crate::policy::PolicyError;
use crate::roadnet::{EnvError, ScenarioError};
use crate::sed::SedError;
use crate::trajectory::TrajectoryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("clip range {0} must lie in (0, 1)")]
    BadClip(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sed(#[from] SedError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// PPO clip range epsilon.
    pub clip: f64,
    /// Entropy bonus weight beta.
    pub entropy_coeff: f64,
    /// Demonstration rounds run at epochs divisible by this interval.
    pub demo_interval: u32,
    /// Number of disjoint agent subsets per demonstration round.
    pub subsets: usize,
    pub epochs: u32,
    /// Decision steps (summed over agents) collected per epoch; episodes
    /// are never cut short, so the actual count can overshoot.
    pub steps_per_epoch: usize,
    pub update_passes: u32,
    pub minibatch: usize,
    /// Per-instruction action budget cap.
    pub instruction_cap: usize,
    /// Epoch interval for checkpoint writes (0 disables periodic writes).
    pub checkpoint_interval: u32,
    /// When false the metrics wall-clock column is written as 0.0 so runs
    /// with equal seeds produce byte-identical files.
    pub record_timing: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            learning_rate: 3e-4,
            clip: 0.2,
            entropy_coeff: 0.01,
            demo_interval: 10,
            subsets: 2,
            epochs: 500,
            steps_per_epoch: 1000,
            update_passes: 4,
            minibatch: 64,
            instruction_cap: crate::sed::DEFAULT_INSTRUCTION_CAP,
            checkpoint_interval: 50,
            record_timing: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |msg: String| Err(TrainerError::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0 < self.clip && self.clip < 1.0) {
            return fail(format!("clip {} must lie in (0, 1)", self.clip));
        }
        if !(0.0 < self.entropy_coeff && self.entropy_coeff <= 1.0) {
            return fail(format!("entropy coefficient {} must lie in (0, 1]", self.entropy_coeff));
        }
        if self.demo_interval == 0 {
            return fail("demonstration interval must be at least 1".into());
        }
        if self.subsets == 0 {
            return fail("subset count must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epoch count must be at least 1".into());
        }
        if self.steps_per_epoch == 0 {
            return fail("steps per epoch must be at least 1".into());
        }
        if self.update_passes == 0 {
            return fail("update passes must be at least 1".into());
        }
        if self.minibatch == 0 {
            return fail("minibatch size must be at least 1".into());
        }
        if self.instruction_cap == 0 {
            return fail("instruction cap must be at least 1".into());
        }
        Ok(())
    }
}
