//! Training objectives: mean-squared value loss, the clipped surrogate,
//! the DTW-adaptive mixing weight, and the per-minibatch hybrid objective
//! with its analytic gradient.
//!
//! Everything here is written as an objective to maximize; the optimizer
//! steps on the negated gradient.

use super::TrainerError;
use crate::policy::PolicyNet;
use crate::roadnet::Observation;

/// One decision prepared for an update: frozen collection-time log
/// probability, frozen return target, and the advantage under the
/// pre-update value head.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Observation,
    pub action: usize,
    pub old_log_prob: f64,
    pub ret: f64,
    pub advantage: f64,
    /// True for steps taken under planner instructions.
    pub expert: bool,
}

/// Mean squared error between value predictions and return targets.
pub fn value_loss(predictions: &[f64], returns: &[f64]) -> Result<f64, TrainerError> {
    if predictions.len() != returns.len() {
        return Err(TrainerError::LengthMismatch {
            left: predictions.len(),
            right: returns.len(),
        });
    }
    if predictions.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let sum: f64 = predictions.iter().zip(returns).map(|(v, r)| (v - r) * (v - r)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Importance ratios are exponentiated log-prob differences, capped so a
/// vanishing collection-time probability cannot overflow to infinity. The
/// cap sits far outside any clip range, so it never affects the pessimistic
/// minimum in practice.
const MAX_LOG_RATIO: f64 = 60.0;

fn ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).min(MAX_LOG_RATIO).exp()
}

/// Batch-mean pessimistic surrogate: `min(w*A, clip(w, 1-eps, 1+eps)*A)`
/// with `w` the importance ratio.
pub fn clipped_surrogate(
    log_prob_new: &[f64],
    log_prob_old: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<f64, TrainerError> {
    if log_prob_new.len() != log_prob_old.len() {
        return Err(TrainerError::LengthMismatch {
            left: log_prob_new.len(),
            right: log_prob_old.len(),
        });
    }
    if log_prob_new.len() != advantages.len() {
        return Err(TrainerError::LengthMismatch {
            left: log_prob_new.len(),
            right: advantages.len(),
        });
    }
    if log_prob_new.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(TrainerError::BadClip(epsilon));
    }
    let mut sum = 0.0;
    for i in 0..log_prob_new.len() {
        let w = ratio(log_prob_new[i], log_prob_old[i]);
        let unclipped = w * advantages[i];
        let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon) * advantages[i];
        sum += unclipped.min(clipped);
    }
    Ok(sum / log_prob_new.len() as f64)
}

/// Mixing weight `exp(-(k/K) * dtw)`: 1 with a perfectly matching
/// demonstration, decaying toward pure self-training as epochs pass or the
/// demonstration diverges.
pub fn hybrid_alpha(epoch: u32, total_epochs: u32, dtw_normalized: f64) -> f64 {
    debug_assert!(epoch >= 1 && epoch <= total_epochs);
    debug_assert!(dtw_normalized >= 0.0);
    (-(epoch as f64 / total_epochs as f64) * dtw_normalized).exp()
}

/// `alpha * agent_surrogate + (1 - alpha) * expert_surrogate + beta * entropy`.
pub fn hybrid_loss(
    agent_surrogate: f64,
    expert_surrogate: f64,
    alpha: f64,
    entropy: f64,
    beta: f64,
) -> f64 {
    alpha * agent_surrogate + (1.0 - alpha) * expert_surrogate + beta * entropy
}

fn class_counts(batch: &[&Sample]) -> (usize, usize) {
    let agent = batch.iter().filter(|s| !s.expert).count();
    (agent, batch.len() - agent)
}

/// Hybrid objective of one minibatch under the current policy:
/// agent-sample surrogates averaged and weighted by `alpha`, expert-sample
/// surrogates by `1 - alpha`, plus `beta` times the mean entropy. Absent
/// classes contribute nothing.
pub fn minibatch_objective(
    policy: &PolicyNet,
    batch: &[&Sample],
    alpha: f64,
    epsilon: f64,
    beta: f64,
) -> Result<f64, TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(TrainerError::BadClip(epsilon));
    }
    let (n_agent, n_expert) = class_counts(batch);
    let mut agent_sum = 0.0;
    let mut expert_sum = 0.0;
    let mut entropy_sum = 0.0;
    for s in batch {
        let dist = policy.distribution(&s.obs)?;
        let w = ratio(dist.log_prob(s.action)?, s.old_log_prob);
        let unclipped = w * s.advantage;
        let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon) * s.advantage;
        let surrogate = unclipped.min(clipped);
        if s.expert {
            expert_sum += surrogate;
        } else {
            agent_sum += surrogate;
        }
        entropy_sum += dist.entropy();
    }
    let mut objective = beta * entropy_sum / batch.len() as f64;
    if n_agent > 0 {
        objective += alpha * agent_sum / n_agent as f64;
    }
    if n_expert > 0 {
        objective += (1.0 - alpha) * expert_sum / n_expert as f64;
    }
    Ok(objective)
}

/// Adds the gradient of [`minibatch_objective`] with respect to the policy
/// parameters into `grad` and returns the objective value. The caller
/// negates the gradient for a descent optimizer.
pub fn accumulate_minibatch_grad(
    policy: &PolicyNet,
    batch: &[&Sample],
    alpha: f64,
    epsilon: f64,
    beta: f64,
    grad: &mut [f64],
) -> Result<f64, TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(TrainerError::BadClip(epsilon));
    }
    let (n_agent, n_expert) = class_counts(batch);
    let entropy_coeff = beta / batch.len() as f64;
    let mut objective = 0.0;
    for s in batch {
        let dist = policy.distribution(&s.obs)?;
        let w = ratio(dist.log_prob(s.action)?, s.old_log_prob);
        let unclipped = w * s.advantage;
        let clipped = w.clamp(1.0 - epsilon, 1.0 + epsilon) * s.advantage;
        let weight = if s.expert {
            (1.0 - alpha) / n_expert as f64
        } else {
            alpha / n_agent as f64
        };
        // d surrogate / d logpi = w*A on the unclipped branch, 0 once the
        // clipped branch takes over (the clip is then saturated).
        let surrogate_coeff = if unclipped <= clipped { unclipped } else { 0.0 };
        policy.accumulate_objective_grad(
            &s.obs,
            s.action,
            weight * surrogate_coeff,
            entropy_coeff,
            grad,
        )?;
        objective += weight * unclipped.min(clipped) + entropy_coeff * dist.entropy();
    }
    Ok(objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(value_loss(&[1.0], &[3.0]).unwrap(), 4.0);
        assert_eq!(value_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(value_loss(&[], &[]), Err(TrainerError::EmptyBatch)));
        assert!(matches!(
            value_loss(&[1.0], &[1.0, 2.0]),
            Err(TrainerError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn surrogate_examples() {
        // Ratio 1: objective equals the advantage.
        let a = clipped_surrogate(&[-0.7], &[-0.7], &[2.5], 0.2).unwrap();
        assert!((a - 2.5).abs() < 1e-12);
        // Ratio 1.5 with positive advantage clips to 1.2.
        let up = clipped_surrogate(&[1.5f64.ln()], &[0.0], &[1.0], 0.2).unwrap();
        assert!((up - 1.2).abs() < 1e-12);
        // Ratio 1.5 with negative advantage keeps the worse branch.
        let down = clipped_surrogate(&[1.5f64.ln()], &[0.0], &[-1.0], 0.2).unwrap();
        assert!((down + 1.5).abs() < 1e-12);
        assert!(matches!(
            clipped_surrogate(&[0.0], &[0.0], &[1.0], 1.0),
            Err(TrainerError::BadClip(_))
        ));
    }

    #[test]
    fn alpha_examples_and_bounds() {
        for k in [1, 7, 100] {
            assert_eq!(hybrid_alpha(k, 100, 0.0), 1.0);
        }
        assert!((hybrid_alpha(100, 100, std::f64::consts::LN_2) - 0.5).abs() < 1e-12);
        let mut last = 1.0;
        for k in 1..=20 {
            let a = hybrid_alpha(k, 20, 0.8);
            assert!(a > 0.0 && a < last);
            last = a;
        }
        assert!(hybrid_alpha(3, 20, 0.4) > hybrid_alpha(3, 20, 0.9));
    }

    #[test]
    fn hybrid_loss_arithmetic() {
        assert!((hybrid_loss(2.0, 4.0, 0.5, 1.0, 0.1) - 3.1).abs() < 1e-12);
        // Weight 1 removes the expert term entirely, even an infinite one.
        assert_eq!(hybrid_loss(2.0, 0.0, 1.0, 0.0, 0.01), 2.0);
    }

    fn random_obs(rng: &mut ChaCha20Rng, slots: usize) -> Observation {
        let mut values = vec![rng.gen_range(0.0..25.0), rng.gen_range(0.0..25.0)];
        let mut mask = Vec::new();
        for _ in 0..slots {
            let open = rng.gen_bool(0.8);
            if open {
                values.push(rng.gen_range(0.0..1.0));
                values.push(rng.gen_range(0.0..25.0));
            } else {
                values.push(-1.0);
                values.push(-1.0);
            }
            mask.push(open);
        }
        if !mask.iter().any(|&m| m) {
            mask[0] = true;
            values[2] = 0.5;
            values[3] = 3.0;
        }
        Observation { values, mask }
    }

    fn random_batch(rng: &mut ChaCha20Rng, policy: &PolicyNet, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let obs = random_obs(rng, 4);
                let dist = policy.distribution(&obs).unwrap();
                let (action, _) = dist.sample(rng);
                Sample {
                    old_log_prob: dist.log_prob(action).unwrap() + rng.gen_range(-0.3..0.3),
                    obs,
                    action,
                    ret: rng.gen_range(-3.0..3.0),
                    advantage: rng.gen_range(-2.0..2.0),
                    expert: i % 3 == 0,
                }
            })
            .collect()
    }

    #[test]
    fn minibatch_objective_composes_from_the_scalar_pieces() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let policy = PolicyNet::new(4, 24.0, &mut rng);
        let samples = random_batch(&mut rng, &policy, 12);
        let batch: Vec<&Sample> = samples.iter().collect();
        let (alpha, eps, beta) = (0.7, 0.2, 0.05);

        let mut lp_new = (Vec::new(), Vec::new());
        let mut lp_old = (Vec::new(), Vec::new());
        let mut adv = (Vec::new(), Vec::new());
        let mut entropy = 0.0;
        for s in &samples {
            let dist = policy.distribution(&s.obs).unwrap();
            entropy += dist.entropy() / samples.len() as f64;
            let side = if s.expert { &mut lp_new.1 } else { &mut lp_new.0 };
            side.push(dist.log_prob(s.action).unwrap());
            if s.expert {
                lp_old.1.push(s.old_log_prob);
                adv.1.push(s.advantage);
            } else {
                lp_old.0.push(s.old_log_prob);
                adv.0.push(s.advantage);
            }
        }
        let agent_surr = clipped_surrogate(&lp_new.0, &lp_old.0, &adv.0, eps).unwrap();
        let expert_surr = clipped_surrogate(&lp_new.1, &lp_old.1, &adv.1, eps).unwrap();
        let expected = hybrid_loss(agent_surr, expert_surr, alpha, entropy, beta);
        let got = minibatch_objective(&policy, &batch, alpha, eps, beta).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn minibatch_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut policy = PolicyNet::new(4, 24.0, &mut rng);
        let samples = random_batch(&mut rng, &policy, 6);
        let batch: Vec<&Sample> = samples.iter().collect();
        let (alpha, eps, beta) = (0.6, 0.2, 0.03);

        let mut grad = vec![0.0; policy.param_count()];
        let objective =
            accumulate_minibatch_grad(&policy, &batch, alpha, eps, beta, &mut grad).unwrap();
        let direct = minibatch_objective(&policy, &batch, alpha, eps, beta).unwrap();
        assert!((objective - direct).abs() < 1e-12);

        let h = 1e-5;
        let count = policy.param_count();
        for probe in 0..40 {
            let idx = (probe * 977) % count;
            let saved = policy.params()[idx];
            policy.params_mut()[idx] = saved + h;
            let plus = minibatch_objective(&policy, &batch, alpha, eps, beta).unwrap();
            policy.params_mut()[idx] = saved - h;
            let minus = minibatch_objective(&policy, &batch, alpha, eps, beta).unwrap();
            policy.params_mut()[idx] = saved;
            let fd = (plus - minus) / (2.0 * h);
            // Mixed tolerance: the absolute term covers entries near zero,
            // where central-difference roundoff (~1e-11 here) dominates.
            let tol = 1e-4 * fd.abs().max(grad[idx].abs()) + 1e-9;
            assert!(
                (fd - grad[idx]).abs() < tol,
                "param {idx}: fd {fd} vs analytic {}",
                grad[idx]
            );
        }
    }

    #[test]
    fn saturated_collection_probability_stays_finite() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let policy = PolicyNet::new(4, 24.0, &mut rng);
        let obs = random_obs(&mut rng, 4);
        let (action, _) = policy.distribution(&obs).unwrap().sample(&mut rng);
        let sample = Sample {
            obs,
            action,
            old_log_prob: f64::NEG_INFINITY,
            ret: 1.0,
            advantage: -1.0,
            expert: true,
        };
        let batch = [&sample];
        let objective = minibatch_objective(&policy, &batch, 0.5, 0.2, 0.01).unwrap();
        assert!(objective.is_finite());
        let mut grad = vec![0.0; policy.param_count()];
        let g = accumulate_minibatch_grad(&policy, &batch, 0.5, 0.2, 0.01, &mut grad).unwrap();
        assert!(g.is_finite());
        assert!(grad.iter().all(|v| v.is_finite()));
    }
}
