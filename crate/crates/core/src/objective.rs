//! Clipped surrogate objective with KL penalty, plus the permutation-NLL
//! baseline.
//!
//! The batch objective is
//!
//! ```text
//! (1/MN) * sum_{j,i} [ min(rho*A, clip(rho, 1-eps, 1+eps)*A) - beta*kl ]
//! ```
//!
//! with rho the probability ratio against the sampling-time policy snapshot
//! and `kl` the estimator `r - ln r - 1` against the frozen reference policy
//! (`r = pi_ref/pi_theta`). The value is an objective to *maximize*: trainers
//! ascend it. Ratios are sequence-level; a token-mean variant is provided for
//! multi-token answers, where the per-token ratios are clipped individually
//! and averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Clipping half-width and KL penalty strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig<R> {
    pub clip_eps: R,
    pub kl_beta: R,
}

impl<R: Real> ObjectiveConfig<R> {
    pub fn new(clip_eps: R, kl_beta: R) -> Result<Self> {
        if clip_eps.is_nan() || clip_eps <= R::zero() || clip_eps >= R::one() {
            return Err(Error::Domain(format!("clip_eps = {clip_eps} outside (0,1)")));
        }
        if kl_beta.is_nan() || kl_beta < R::zero() {
            return Err(Error::Domain(format!("kl_beta = {kl_beta} must be >= 0")));
        }
        Ok(Self { clip_eps, kl_beta })
    }
}

impl<R: Real> Default for ObjectiveConfig<R> {
    fn default() -> Self {
        Self {
            clip_eps: R::of(0.2),
            kl_beta: R::of(0.05),
        }
    }
}

/// Log-probability of one sampled answer under the three policy snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLogProbs<R> {
    pub logp_theta: R,
    pub logp_old: R,
    pub logp_ref: R,
}

fn check_finite<R: Real>(name: &str, v: R) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("{name} = {v} is not finite")));
    }
    Ok(())
}

/// KL estimator `r - ln r - 1` with `r = exp(logp_ref - logp_theta)`.
///
/// Non-negative for all finite inputs, zero exactly when the policies agree
/// on the sample. `ln r` is taken from the log-space difference directly.
pub fn kl_k3<R: Real>(logp_theta: R, logp_ref: R) -> Result<R> {
    check_finite("logp_theta", logp_theta)?;
    check_finite("logp_ref", logp_ref)?;
    let log_r = logp_ref - logp_theta;
    let r = log_r.exp();
    // r - ln r - 1 >= 0 with equality at r = 1; clamp rounding noise at 0
    Ok((r - log_r - R::one()).max(R::zero()))
}

/// Derivative of [`kl_k3`] with respect to `logp_theta`, i.e. `1 - r`.
pub fn kl_k3_grad_logp_theta<R: Real>(logp_theta: R, logp_ref: R) -> R {
    R::one() - (logp_ref - logp_theta).exp()
}

fn clip<R: Real>(rho: R, eps: R) -> R {
    rho.min(R::one() + eps).max(R::one() - eps)
}

/// Pessimistic clipped policy-ratio term `min(rho*A, clip(rho)*A)`.
pub fn clipped_surrogate<R: Real>(lp: &SampleLogProbs<R>, advantage: R, clip_eps: R) -> Result<R> {
    Ok(surrogate_with_grad(lp, advantage, clip_eps)?.0)
}

/// Surrogate value together with its derivative w.r.t. `logp_theta`.
///
/// The gradient follows the attained branch of the min; exact ties at the
/// clip boundary take the unclipped branch, whose derivative is `rho*A`
/// (the clipped branch is constant in rho wherever it is strictly attained).
pub fn surrogate_with_grad<R: Real>(
    lp: &SampleLogProbs<R>,
    advantage: R,
    clip_eps: R,
) -> Result<(R, R)> {
    if clip_eps.is_nan() || clip_eps <= R::zero() || clip_eps >= R::one() {
        return Err(Error::Domain(format!("clip_eps = {clip_eps} outside (0,1)")));
    }
    check_finite("advantage", advantage)?;
    let rho = (lp.logp_theta - lp.logp_old).exp();
    if !rho.is_finite() {
        return Err(Error::Domain(format!(
            "probability ratio exp({} - {}) is not finite",
            lp.logp_theta, lp.logp_old
        )));
    }
    let unclipped = rho * advantage;
    let clipped = clip(rho, clip_eps) * advantage;
    if unclipped <= clipped {
        Ok((unclipped, unclipped)) // d(rho*A)/dlogp = rho*A
    } else {
        Ok((clipped, R::zero()))
    }
}

/// Token-mean variant: per-token ratios are clipped individually and the
/// resulting terms averaged. Identical to the sequence form for one token.
pub fn clipped_surrogate_token_mean<R: Real>(
    tokens: &[SampleLogProbs<R>],
    advantage: R,
    clip_eps: R,
) -> Result<R> {
    if tokens.is_empty() {
        return Err(Error::Shape("token-mean surrogate needs at least one token".into()));
    }
    let mut acc = R::zero();
    for t in tokens {
        acc += clipped_surrogate(t, advantage, clip_eps)?;
    }
    Ok(acc / R::of_usize(tokens.len()))
}

/// Per-sample pieces of the batch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm<R> {
    pub surrogate: R,
    pub kl: R,
    /// Derivative of `surrogate - beta*kl` w.r.t. this sample's `logp_theta`,
    /// for assembling policy-parameter gradients by the chain rule.
    pub dobj_dlogp: R,
}

/// Batch objective value and its per-sample terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective<R> {
    /// Mean over all M*N samples of `surrogate - beta*kl`. Maximized.
    pub objective: R,
    pub terms: Vec<Vec<LossTerm<R>>>,
}

/// Evaluates the batch objective for an M x N grid of samples and matching
/// final advantages.
pub fn dgao_loss<R: Real>(
    batch: &[Vec<SampleLogProbs<R>>],
    advantages: &[Vec<R>],
    cfg: &ObjectiveConfig<R>,
) -> Result<BatchObjective<R>> {
    if batch.is_empty() || batch[0].is_empty() {
        return Err(Error::Shape("objective batch must be at least 1x1".into()));
    }
    if batch.len() != advantages.len() {
        return Err(Error::Shape(format!(
            "{} sample rows for {} advantage rows",
            batch.len(),
            advantages.len()
        )));
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut total = R::zero();
    let mut count = 0usize;
    for (j, (row, adv_row)) in batch.iter().zip(advantages).enumerate() {
        if row.len() != adv_row.len() {
            return Err(Error::Shape(format!(
                "row {j}: {} samples for {} advantages",
                row.len(),
                adv_row.len()
            )));
        }
        let mut term_row = Vec::with_capacity(row.len());
        for (lp, &a) in row.iter().zip(adv_row) {
            let (surrogate, surr_grad) = surrogate_with_grad(lp, a, cfg.clip_eps)?;
            let kl = kl_k3(lp.logp_theta, lp.logp_ref)?;
            let kl_grad = kl_k3_grad_logp_theta(lp.logp_theta, lp.logp_ref);
            total += surrogate - cfg.kl_beta * kl;
            count += 1;
            term_row.push(LossTerm {
                surrogate,
                kl,
                dobj_dlogp: surr_grad - cfg.kl_beta * kl_grad,
            });
        }
        terms.push(term_row);
    }
    Ok(BatchObjective {
        objective: total / R::of_usize(count),
        terms,
    })
}

/// Monte-Carlo permutation NLL: `-(1/N) * sum logp_theta(label | variant)`.
pub fn paft_nll<R: Real>(logp_theta_variants: &[R]) -> Result<R> {
    if logp_theta_variants.is_empty() {
        return Err(Error::Shape("NLL needs at least one variant".into()));
    }
    Ok(-logp_theta_variants.iter().copied().sum::<R>() / R::of_usize(logp_theta_variants.len()))
}
