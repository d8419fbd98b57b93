//! Masked categorical distribution over action slots.

use super::PolicyError;
use rand::Rng;

/// Softmax restricted to unmasked slots. Masked slots carry probability
/// exactly 0 and log-probability `-inf`; probabilities over unmasked slots
/// sum to 1 up to rounding.
#[derive(Debug, Clone)]
pub struct MaskedCategorical {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    mask: Vec<bool>,
}

/// Numerically stable masked softmax: shifts by the unmasked maximum before
/// exponentiating, so logit spreads of 1e4 and worse stay finite.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<MaskedCategorical, PolicyError> {
    if logits.len() != mask.len() {
        return Err(PolicyError::MaskShape { got: mask.len(), expected: logits.len() });
    }
    let mut max = f64::NEG_INFINITY;
    for (i, (&l, &m)) in logits.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if !l.is_finite() {
            return Err(PolicyError::NonFiniteLogit { index: i });
        }
        max = max.max(l);
    }
    if max == f64::NEG_INFINITY {
        return Err(PolicyError::AllMasked);
    }

    let mut sum = 0.0;
    for (&l, &m) in logits.iter().zip(mask) {
        if m {
            sum += (l - max).exp();
        }
    }
    let log_sum = sum.ln();

    let mut probs = vec![0.0; logits.len()];
    let mut log_probs = vec![f64::NEG_INFINITY; logits.len()];
    for i in 0..logits.len() {
        if mask[i] {
            let lp = (logits[i] - max) - log_sum;
            log_probs[i] = lp;
            probs[i] = lp.exp();
        }
    }
    Ok(MaskedCategorical { probs, log_probs, mask: mask.to_vec() })
}

impl MaskedCategorical {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn log_prob(&self, action: usize) -> Result<f64, PolicyError> {
        if action >= self.probs.len() {
            return Err(PolicyError::ActionOutOfRange { action, slots: self.probs.len() });
        }
        if !self.mask[action] {
            return Err(PolicyError::MaskedAction { action });
        }
        Ok(self.log_probs[action])
    }

    /// Shannon entropy in nats over unmasked slots; slots whose probability
    /// underflowed to zero contribute nothing.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for (&p, &lp) in self.probs.iter().zip(&self.log_probs) {
            if p > 0.0 && lp.is_finite() {
                h -= p * lp;
            }
        }
        h
    }

    /// Inverse-CDF sample from one uniform draw; returns the action and its
    /// log-probability.
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, f64) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_unmasked = 0;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if !m {
                continue;
            }
            last_unmasked = i;
            acc += p;
            if u < acc {
                return (i, self.log_probs[i]);
            }
        }
        // Rounding left acc marginally below 1; take the last unmasked slot.
        (last_unmasked, self.log_probs[last_unmasked])
    }

    /// Unmasked action with the highest probability; ties break to the
    /// lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if m && p > best.0 {
                best = (p, i);
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn matches_plain_softmax_when_unmasked() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let mask = [true; 4];
        let d = masked_softmax(&logits, &mask).unwrap();
        let exp: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let z: f64 = exp.iter().sum();
        for (p, e) in d.probs().iter().zip(&exp) {
            assert!((p - e / z).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_slots_have_zero_probability() {
        let logits = [5.0, 1.0, 3.0];
        let mask = [true, false, true];
        let d = masked_softmax(&logits, &mask).unwrap();
        assert_eq!(d.prob(1), 0.0);
        assert!(d.log_prob(1).is_err());
        let total: f64 = d.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survives_extreme_logit_spread() {
        let logits = [1e4, -1e4, 0.0];
        let mask = [true, true, true];
        let d = masked_softmax(&logits, &mask).unwrap();
        assert!(d.probs().iter().all(|p| p.is_finite()));
        assert!((d.prob(0) - 1.0).abs() < 1e-12);
        assert!(d.entropy().is_finite());
        assert!(d.entropy() >= 0.0);
    }

    #[test]
    fn all_masked_is_contract_violation() {
        match masked_softmax(&[1.0, 2.0], &[false, false]) {
            Err(PolicyError::AllMasked) => {}
            other => panic!("expected AllMasked, got {other:?}"),
        }
    }

    #[test]
    fn single_slot_is_deterministic_with_zero_entropy() {
        let d = masked_softmax(&[0.7, 0.1], &[false, true]).unwrap();
        assert_eq!(d.prob(1), 1.0);
        assert_eq!(d.entropy(), 0.0);
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn entropy_bounded_by_log_slot_count() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..8usize);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            let live = mask.iter().filter(|&&m| m).count();
            let d = masked_softmax(&logits, &mask).unwrap();
            let h = d.entropy();
            assert!(h >= 0.0);
            assert!(h <= (live as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn sample_frequencies_match_probabilities() {
        let d = masked_softmax(&[0.0, 1.0, -0.5, 0.3], &[true, true, false, true]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (a, lp) = d.sample(&mut rng);
            assert!(d.mask()[a]);
            assert!(lp.is_finite());
            counts[a] += 1;
        }
        for i in 0..4 {
            let freq = counts[i] as f64 / n as f64;
            assert!(
                (freq - d.prob(i)).abs() < 0.01,
                "slot {i}: freq {freq} prob {}",
                d.prob(i)
            );
        }
    }
}
