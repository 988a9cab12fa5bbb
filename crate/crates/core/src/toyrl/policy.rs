//! Linear-softmax policy over the answer vocabulary.
//!
//! Logits are `W^T x` for a feature vector x; `grad_logp` is the exact
//! analytic gradient `(onehot(answer) - p) outer x` of the sampled answer's
//! log-probability, which is all the trainer needs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Role of a policy snapshot in the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotRole {
    /// The parameters being optimized.
    Theta,
    /// The sampling-time snapshot the ratio is taken against.
    Old,
    /// The frozen cold-start policy anchoring the KL penalty.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy<R> {
    weights: Vec<R>, // row-major [feature][answer]
    feature_dim: usize,
    n_answers: usize,
    role: SnapshotRole,
}

impl<R: Real> SoftmaxPolicy<R> {
    pub fn zeros(feature_dim: usize, n_answers: usize) -> Self {
        Self {
            weights: vec![R::zero(); feature_dim * n_answers],
            feature_dim,
            n_answers,
            role: SnapshotRole::Theta,
        }
    }

    /// Deterministic uniform init in [-scale, scale].
    pub fn init_random(feature_dim: usize, n_answers: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..feature_dim * n_answers)
            .map(|_| R::of(rng.gen_range(-scale..=scale)))
            .collect();
        Self {
            weights,
            feature_dim,
            n_answers,
            role: SnapshotRole::Theta,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_answers(&self) -> usize {
        self.n_answers
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    /// Tags a clone with its place in the training loop.
    pub fn into_role(mut self, role: SnapshotRole) -> Self {
        self.role = role;
        self
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [R] {
        &mut self.weights
    }

    fn check_features(&self, features: &[R]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "feature vector has {} entries, policy expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    pub fn logits(&self, features: &[R]) -> Result<Vec<R>> {
        self.check_features(features)?;
        let mut logits = vec![R::zero(); self.n_answers];
        for (f, &x) in features.iter().enumerate() {
            if x == R::zero() {
                continue;
            }
            let row = &self.weights[f * self.n_answers..(f + 1) * self.n_answers];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += w * x;
            }
        }
        Ok(logits)
    }

    /// Log-probabilities via a max-shifted log-sum-exp.
    pub fn log_distribution(&self, features: &[R]) -> Result<Vec<R>> {
        let logits = self.logits(features)?;
        let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
        let lse = max
            + logits
                .iter()
                .map(|&l| (l - max).exp())
                .sum::<R>()
                .ln();
        Ok(logits.into_iter().map(|l| l - lse).collect())
    }

    /// Probability vector; positive entries summing to 1.
    pub fn distribution(&self, features: &[R]) -> Result<Vec<R>> {
        Ok(self.log_distribution(features)?.into_iter().map(R::exp).collect())
    }

    /// Log-probability of one answer.
    pub fn logp(&self, features: &[R], answer: usize) -> Result<R> {
        let logps = self.log_distribution(features)?;
        logps
            .get(answer)
            .copied()
            .ok_or_else(|| Error::Index(format!("answer {answer} out of {}", self.n_answers)))
    }

    /// Draws an answer at temperature 1 and returns it with its log-prob.
    pub fn sample<G: Rng>(&self, features: &[R], rng: &mut G) -> Result<(usize, R)> {
        let logps = self.log_distribution(features)?;
        let u = R::of(rng.gen::<f64>());
        let mut acc = R::zero();
        for (i, &lp) in logps.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return Ok((i, lp));
            }
        }
        // rounding can leave acc slightly below 1; take the last answer
        let last = logps.len() - 1;
        Ok((last, logps[last]))
    }

    /// Most probable answer (lowest index on ties), as greedy decoding.
    pub fn greedy(&self, features: &[R]) -> Result<usize> {
        let logits = self.logits(features)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Analytic gradient of `log p(answer | features)` w.r.t. the weights.
    pub fn grad_logp(&self, features: &[R], answer: usize) -> Result<Vec<R>> {
        if answer >= self.n_answers {
            return Err(Error::Index(format!(
                "answer {answer} out of {}",
                self.n_answers
            )));
        }
        let probs = self.distribution(features)?;
        let mut grad = vec![R::zero(); self.weights.len()];
        for (f, &x) in features.iter().enumerate() {
            if x == R::zero() {
                continue;
            }
            let row = &mut grad[f * self.n_answers..(f + 1) * self.n_answers];
            for (v, g) in row.iter_mut().enumerate() {
                let indicator = if v == answer { R::one() } else { R::zero() };
                *g = (indicator - probs[v]) * x;
            }
        }
        Ok(grad)
    }

    /// `weights += scale * delta`.
    pub fn add_scaled(&mut self, delta: &[R], scale: R) {
        debug_assert_eq!(delta.len(), self.weights.len());
        for (w, &d) in self.weights.iter_mut().zip(delta) {
            *w += scale * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(xs: &[f64]) -> Vec<f64> {
        xs.to_vec()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = SoftmaxPolicy::<f64>::zeros(3, 4);
        let d = p.distribution(&features(&[1.0, -2.0, 0.5])).unwrap();
        for &v in &d {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let p = SoftmaxPolicy::<f64>::init_random(5, 7, 2.0, 3);
        let d = p.distribution(&features(&[0.3, -1.0, 2.0, 0.0, 1.0])).unwrap();
        let sum: f64 = d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(d.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn shift_invariance() {
        // adding a constant row to the weights of a constant-one feature
        // shifts all logits equally and leaves the distribution unchanged
        let mut p = SoftmaxPolicy::<f64>::init_random(2, 3, 1.0, 9);
        let x = features(&[0.7, 1.0]);
        let before = p.distribution(&x).unwrap();
        for v in 0..3 {
            p.weights_mut()[3 + v] += 11.0; // feature 1 is the constant
        }
        let after = p.distribution(&x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_answer_logit_ratio() {
        // logits [ln 2, 0] over 2 answers -> [2/3, 1/3]
        let mut p = SoftmaxPolicy::<f64>::zeros(1, 2);
        p.weights_mut()[0] = std::f64::consts::LN_2;
        p.weights_mut()[1] = 0.0;
        let d = p.distribution(&features(&[1.0])).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_matches_distribution_within_binomial_bounds() {
        let p = SoftmaxPolicy::<f64>::init_random(2, 4, 1.0, 17);
        let x = features(&[1.0, 0.5]);
        let d = p.distribution(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..trials {
            let (a, lp) = p.sample(&x, &mut rng).unwrap();
            counts[a] += 1;
            assert!((lp - d[a].ln()).abs() < 1e-12);
        }
        for (v, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            let sigma = (d[v] * (1.0 - d[v]) / trials as f64).sqrt();
            assert!(
                (freq - d[v]).abs() <= 3.0 * sigma,
                "answer {v}: freq {freq} vs p {} (3 sigma {})",
                d[v],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn near_deterministic_sampling() {
        let mut p = SoftmaxPolicy::<f64>::zeros(1, 3);
        p.weights_mut()[0] = 80.0; // answer 0 dominates
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, lp) = p.sample(&features(&[1.0]), &mut rng).unwrap();
        assert_eq!(a, 0);
        assert!(lp.abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let dim = 4;
            let vocab = 5;
            let p = SoftmaxPolicy::<f64>::init_random(dim, vocab, 1.5, rng.gen());
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let answer = rng.gen_range(0..vocab);
            let analytic = p.grad_logp(&x, answer).unwrap();
            let h = 1e-6;
            #[allow(clippy::needless_range_loop)] // idx mutates three views
            for idx in 0..dim * vocab {
                let mut plus = p.clone();
                plus.weights_mut()[idx] += h;
                let mut minus = p.clone();
                minus.weights_mut()[idx] -= h;
                let fd = (plus.logp(&x, answer).unwrap() - minus.logp(&x, answer).unwrap())
                    / (2.0 * h);
                let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic[idx] - fd).abs() / denom < 1e-5,
                    "entry {idx}: analytic {} vs fd {fd}",
                    analytic[idx]
                );
            }
        }
    }

    #[test]
    fn expected_score_gradient_is_zero() {
        let p = SoftmaxPolicy::<f64>::init_random(3, 4, 1.0, 31);
        let x = features(&[0.4, -0.7, 1.0]);
        let probs = p.distribution(&x).unwrap();
        let mut acc = vec![0.0f64; 12];
        for (answer, &p_answer) in probs.iter().enumerate() {
            let g = p.grad_logp(&x, answer).unwrap();
            for (a, &gi) in acc.iter_mut().zip(&g) {
                *a += p_answer * gi;
            }
        }
        for &a in &acc {
            assert!(a.abs() < 1e-10);
        }
    }

    #[test]
    fn certain_answer_has_zero_gradient() {
        let mut p = SoftmaxPolicy::<f64>::zeros(1, 2);
        p.weights_mut()[0] = 60.0;
        let g = p.grad_logp(&features(&[1.0]), 0).unwrap();
        for &v in &g {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = SoftmaxPolicy::<f64>::zeros(3, 2);
        assert!(matches!(
            p.distribution(&features(&[1.0])),
            Err(Error::Shape(_))
        ));
    }
}
