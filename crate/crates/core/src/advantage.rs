//! Dual group advantage computation.
//!
//! For a batch of M query groups with N order variants each:
//!
//! * group reward `R_group(j)` — mean reward of group j's variants;
//! * baseline `b` — mean of the group rewards;
//! * inter-group advantage `A_group(j) = R_group(j) − b`, shared by every
//!   variant of group j and rewarding order-stable *and correct* groups
//!   (an all-wrong group sits at the bottom of the group-reward ordering);
//! * intra-group advantage `A_ind(j,i) = R(j,i) − R_group(j)`, rewarding
//!   correct rollouts relative to their group;
//! * hybrid `A_hybrid = α·A_group + (1−α)·A_ind`;
//! * final `A_final = (A_hybrid − μ_A)/(σ_A + ε_A)` normalized over the whole
//!   batch with batch mean μ_A and population std σ_A.
//!
//! The group-relative baseline mode (`grpo_advantage`) z-scores rewards
//! within a single group instead and performs no batch normalization.
//!
//! Standard deviations are population (divide by N) throughout; the batch is
//! treated as the population and N = 1 stays finite.

use crate::error::{Error, Result};
use crate::rewards::RewardMatrix;
use crate::scalar::{mean, population_std, Real};

/// Mixing weight and normalization floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageConfig<R> {
    /// Weight of the inter-group component, in [0,1].
    pub alpha: R,
    /// Additive floor on the batch std (keeps degenerate batches finite).
    pub eps_norm: R,
}

impl<R: Real> AdvantageConfig<R> {
    pub fn new(alpha: R, eps_norm: R) -> Result<Self> {
        if alpha.is_nan() || alpha < R::zero() || alpha > R::one() {
            return Err(Error::Domain(format!("alpha = {alpha} outside [0,1]")));
        }
        if eps_norm.is_nan() || eps_norm <= R::zero() {
            return Err(Error::Domain(format!("eps_norm = {eps_norm} must be > 0")));
        }
        Ok(Self { alpha, eps_norm })
    }
}

impl<R: Real> Default for AdvantageConfig<R> {
    fn default() -> Self {
        Self {
            alpha: R::of(0.5),
            eps_norm: R::of(1e-8),
        }
    }
}

/// Every stage of the advantage pipeline for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch<R> {
    /// Per-group mean reward, length M.
    pub group_rewards: Vec<R>,
    /// Batch baseline b (mean of `group_rewards`).
    pub baseline: R,
    /// Inter-group advantages, length M; sums to zero.
    pub inter: Vec<R>,
    /// Intra-group advantages, M x N; each row sums to zero.
    pub intra: Vec<Vec<R>>,
    /// alpha-mix of `inter` (broadcast) and `intra`.
    pub hybrid: Vec<Vec<R>>,
    /// Mean of `hybrid` over all M*N entries.
    pub batch_mean: R,
    /// Population std of `hybrid` over all M*N entries.
    pub batch_std: R,
    /// Batch-normalized advantages fed to the objective.
    pub final_advantages: Vec<Vec<R>>,
}

/// Per-group mean reward.
pub fn group_rewards<R: Real>(rm: &RewardMatrix<R>) -> Vec<R> {
    rm.rows().iter().map(|row| mean(row)).collect()
}

/// Baseline and inter-group advantages.
pub fn inter_group_advantage<R: Real>(group_rewards: &[R]) -> Result<(R, Vec<R>)> {
    if group_rewards.is_empty() {
        return Err(Error::Shape("no groups in batch".into()));
    }
    let baseline = mean(group_rewards);
    Ok((baseline, group_rewards.iter().map(|&g| g - baseline).collect()))
}

/// Intra-group advantages: reward minus the group's mean reward.
pub fn intra_group_advantage<R: Real>(
    rm: &RewardMatrix<R>,
    group_rewards: &[R],
) -> Result<Vec<Vec<R>>> {
    if group_rewards.len() != rm.n_groups() {
        return Err(Error::Shape(format!(
            "{} group rewards for {} groups",
            group_rewards.len(),
            rm.n_groups()
        )));
    }
    Ok(rm
        .rows()
        .iter()
        .zip(group_rewards)
        .map(|(row, &g)| row.iter().map(|&r| r - g).collect())
        .collect())
}

/// Elementwise `alpha*inter[j] + (1-alpha)*intra[j][i]`.
pub fn hybrid_advantage<R: Real>(inter: &[R], intra: &[Vec<R>], alpha: R) -> Result<Vec<Vec<R>>> {
    if alpha.is_nan() || alpha < R::zero() || alpha > R::one() {
        return Err(Error::Domain(format!("alpha = {alpha} outside [0,1]")));
    }
    if inter.len() != intra.len() {
        return Err(Error::Shape(format!(
            "{} inter advantages for {} intra rows",
            inter.len(),
            intra.len()
        )));
    }
    Ok(inter
        .iter()
        .zip(intra)
        .map(|(&a_group, row)| {
            row.iter()
                .map(|&a_ind| alpha * a_group + (R::one() - alpha) * a_ind)
                .collect()
        })
        .collect())
}

/// Normalizes the hybrid advantages over the full batch.
///
/// Returns `(final, mu, sigma)` with `final = (hybrid - mu)/(sigma + eps)`.
/// A constant batch has sigma = 0 and normalizes to all zeros.
pub fn normalize_batch<R: Real>(hybrid: &[Vec<R>], eps_norm: R) -> Result<(Vec<Vec<R>>, R, R)> {
    let flat: Vec<R> = hybrid.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(Error::Shape("cannot normalize an empty batch".into()));
    }
    if eps_norm.is_nan() || eps_norm <= R::zero() {
        return Err(Error::Domain(format!("eps_norm = {eps_norm} must be > 0")));
    }
    let mu = mean(&flat);
    let sigma = population_std(&flat);
    let denom = sigma + eps_norm;
    let out = hybrid
        .iter()
        .map(|row| row.iter().map(|&h| (h - mu) / denom).collect())
        .collect();
    Ok((out, mu, sigma))
}

/// Group-relative z-score advantage: `(r_i - mean)/std` with population std.
///
/// A zero-variance group carries no learning signal and yields all zeros.
pub fn grpo_advantage<R: Real>(rewards: &[R]) -> Vec<R> {
    let m = mean(rewards);
    let s = population_std(rewards);
    if s == R::zero() {
        return vec![R::zero(); rewards.len()];
    }
    rewards.iter().map(|&r| (r - m) / s).collect()
}

/// Runs the whole pipeline for one reward matrix.
pub fn compute_advantages<R: Real>(
    rm: &RewardMatrix<R>,
    cfg: &AdvantageConfig<R>,
) -> Result<AdvantageBatch<R>> {
    let group_rewards = group_rewards(rm);
    let (baseline, inter) = inter_group_advantage(&group_rewards)?;
    let intra = intra_group_advantage(rm, &group_rewards)?;
    let hybrid = hybrid_advantage(&inter, &intra, cfg.alpha)?;
    let (final_advantages, batch_mean, batch_std) = normalize_batch(&hybrid, cfg.eps_norm)?;
    Ok(AdvantageBatch {
        group_rewards,
        baseline,
        inter,
        intra,
        hybrid,
        batch_mean,
        batch_std,
        final_advantages,
    })
}
