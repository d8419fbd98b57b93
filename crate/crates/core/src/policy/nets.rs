//! Policy and value networks over navigation observations.

use super::adam::Adam;
use super::dist::{masked_softmax, MaskedCategorical};
use super::mlp::Mlp;
use super::PolicyError;
use crate::roadnet::Observation;
use rand::Rng;

/// Width of both hidden layers in every network.
pub const HIDDEN_WIDTH: usize = 128;

/// Output-layer scale for policy heads; small values start near uniform.
const POLICY_OUTPUT_SCALE: f64 = 0.01;

/// Anything able to score an (observation, action) pair with a
/// log-probability. Lets trajectory analytics run against tabular test
/// policies as well as real networks.
pub trait PolicyEval {
    fn action_log_prob(&self, obs: &Observation, action: usize) -> Result<f64, PolicyError>;
}

/// Maps junction ids in an observation to roughly unit scale and leaves
/// scores and sentinels untouched. Sentinel entries are exactly -1 on the
/// wire and stay -1 here.
fn features(obs: &Observation, id_scale: f64) -> Vec<f64> {
    let mut out = obs.values.clone();
    let norm = |v: f64| if v >= 0.0 { v / id_scale } else { v };
    out[0] = norm(out[0]);
    out[1] = norm(out[1]);
    for slot in 0..obs.mask.len() {
        // Score slots (2 + 2*slot) already sit in [0, 1] or are -1.
        let idx = 3 + 2 * slot;
        out[idx] = norm(out[idx]);
    }
    out
}

/// Categorical policy over outgoing-edge slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    mlp: Mlp,
    m_out: usize,
    id_scale: f64,
}

impl PolicyNet {
    pub fn new(m_out: usize, id_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(m_out > 0);
        assert!(id_scale > 0.0);
        let dims = [2 + 2 * m_out, HIDDEN_WIDTH, HIDDEN_WIDTH, m_out];
        PolicyNet { mlp: Mlp::new(&dims, POLICY_OUTPUT_SCALE, rng), m_out, id_scale }
    }

    pub(crate) fn from_parts(mlp: Mlp, m_out: usize, id_scale: f64) -> Self {
        PolicyNet { mlp, m_out, id_scale }
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn id_scale(&self) -> f64 {
        self.id_scale
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.m_out
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    fn check_obs(&self, obs: &Observation) -> Result<(), PolicyError> {
        if obs.values.len() != self.obs_dim() {
            return Err(PolicyError::ObsShape { got: obs.values.len(), expected: self.obs_dim() });
        }
        if obs.mask.len() != self.m_out {
            return Err(PolicyError::MaskShape { got: obs.mask.len(), expected: self.m_out });
        }
        Ok(())
    }

    /// Action distribution at an observation; masked slots get probability 0
    /// and an all-masked observation is a contract violation.
    pub fn distribution(&self, obs: &Observation) -> Result<MaskedCategorical, PolicyError> {
        self.check_obs(obs)?;
        let logits = self.mlp.forward(&features(obs, self.id_scale));
        masked_softmax(&logits, &obs.mask)
    }

    /// Adds the gradient of
    /// `logprob_coeff * ln pi(action | obs) + entropy_coeff * H(pi(obs))`
    /// with respect to the parameters into `grad`, returning the term's
    /// value. Callers compose surrogate objectives by choosing the
    /// coefficients per sample.
    pub fn accumulate_objective_grad(
        &self,
        obs: &Observation,
        action: usize,
        logprob_coeff: f64,
        entropy_coeff: f64,
        grad: &mut [f64],
    ) -> Result<f64, PolicyError> {
        self.check_obs(obs)?;
        if grad.len() != self.mlp.param_count() {
            return Err(PolicyError::ShapeMismatch {
                params: self.mlp.param_count(),
                grads: grad.len(),
            });
        }
        let x = features(obs, self.id_scale);
        let (logits, trace) = self.mlp.forward_trace(&x);
        let dist = masked_softmax(&logits, &obs.mask)?;
        let log_prob = dist.log_prob(action)?;
        let entropy = dist.entropy();

        // d logpi(a)/dz_j = 1[a=j] - p_j ; dH/dz_j = -p_j (logp_j + H),
        // both zero on masked slots.
        let mut d_logits = vec![0.0; logits.len()];
        for j in 0..logits.len() {
            if !obs.mask[j] {
                continue;
            }
            let p = dist.prob(j);
            let indicator = if j == action { 1.0 } else { 0.0 };
            let d_lp = indicator - p;
            let d_h = if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 };
            d_logits[j] = logprob_coeff * d_lp + entropy_coeff * d_h;
        }
        self.mlp.backward(&trace, &d_logits, grad);
        Ok(logprob_coeff * log_prob + entropy_coeff * entropy)
    }
}

impl PolicyEval for PolicyNet {
    fn action_log_prob(&self, obs: &Observation, action: usize) -> Result<f64, PolicyError> {
        self.distribution(obs)?.log_prob(action)
    }
}

/// Scalar state-value network over the same observation encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    mlp: Mlp,
    m_out: usize,
    id_scale: f64,
}

impl ValueNet {
    pub fn new(m_out: usize, id_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(m_out > 0);
        assert!(id_scale > 0.0);
        let dims = [2 + 2 * m_out, HIDDEN_WIDTH, HIDDEN_WIDTH, 1];
        ValueNet { mlp: Mlp::new(&dims, 1.0, rng), m_out, id_scale }
    }

    pub(crate) fn from_parts(mlp: Mlp, m_out: usize, id_scale: f64) -> Self {
        ValueNet { mlp, m_out, id_scale }
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.m_out
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn id_scale(&self) -> f64 {
        self.id_scale
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    fn check_obs(&self, obs: &Observation) -> Result<(), PolicyError> {
        if obs.values.len() != self.obs_dim() {
            return Err(PolicyError::ObsShape { got: obs.values.len(), expected: self.obs_dim() });
        }
        Ok(())
    }

    pub fn value(&self, obs: &Observation) -> Result<f64, PolicyError> {
        self.check_obs(obs)?;
        Ok(self.mlp.forward(&features(obs, self.id_scale))[0])
    }

    /// Adds `d_value * dV(obs)/dparams` into `grad` and returns `V(obs)`.
    pub fn accumulate_value_grad(
        &self,
        obs: &Observation,
        d_value: f64,
        grad: &mut [f64],
    ) -> Result<f64, PolicyError> {
        self.check_obs(obs)?;
        if grad.len() != self.mlp.param_count() {
            return Err(PolicyError::ShapeMismatch {
                params: self.mlp.param_count(),
                grads: grad.len(),
            });
        }
        let (out, trace) = self.mlp.forward_trace(&features(obs, self.id_scale));
        self.mlp.backward(&trace, &[d_value], grad);
        Ok(out[0])
    }
}

/// Everything one agent learns: its policy, a value net for its own
/// rollouts, a value net for demonstration rollouts, and optimizer state
/// for each.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub policy: PolicyNet,
    pub value_agent: ValueNet,
    pub value_expert: ValueNet,
    pub opt_policy: Adam,
    pub opt_value_agent: Adam,
    pub opt_value_expert: Adam,
}

impl PolicyBundle {
    pub fn new(m_out: usize, id_scale: f64, learning_rate: f64, rng: &mut impl Rng) -> Self {
        let policy = PolicyNet::new(m_out, id_scale, rng);
        let value_agent = ValueNet::new(m_out, id_scale, rng);
        let value_expert = ValueNet::new(m_out, id_scale, rng);
        let opt_policy = Adam::new(learning_rate, policy.param_count());
        let opt_value_agent = Adam::new(learning_rate, value_agent.param_count());
        let opt_value_expert = Adam::new(learning_rate, value_expert.param_count());
        PolicyBundle {
            policy,
            value_agent,
            value_expert,
            opt_policy,
            opt_value_agent,
            opt_value_expert,
        }
    }
}
