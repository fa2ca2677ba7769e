//! Closed-form reference estimators: naive and pooled group means, Bock
//! positive-part shrinkage, and the three multi-task baselines.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::summary::TaskSummary;

/// A fitted mean vector with its method tag and a per-group flag marking
/// entries that were filled by a fallback rule rather than direct data.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub mu_hat: DVector<f64>,
    pub method: &'static str,
    pub fallback: Vec<bool>,
}

impl EstimatorOutput {
    pub fn direct(mu_hat: DVector<f64>, method: &'static str) -> Self {
        let fallback = vec![false; mu_hat.len()];
        Self {
            mu_hat,
            method,
            fallback,
        }
    }
}

/// Count-weighted overall mean of the populated groups.
fn pooled_value(summary: &TaskSummary) -> Result<f64> {
    let total = summary.total_count();
    if total == 0 {
        return Err(Error::AllGroupsEmpty);
    }
    let mut acc = 0.0;
    for g in 0..summary.group_count() {
        acc += summary.n[g] as f64 * summary.y[g];
    }
    Ok(acc / total as f64)
}

/// Per-group sample means; empty groups fall back to the pooled mean.
pub fn naive(summary: &TaskSummary) -> Result<EstimatorOutput> {
    let pool = pooled_value(summary)?;
    let d = summary.group_count();
    let mut mu = DVector::zeros(d);
    let mut fallback = vec![false; d];
    for g in 0..d {
        if summary.is_missing(g) {
            mu[g] = pool;
            fallback[g] = true;
        } else {
            mu[g] = summary.y[g];
        }
    }
    Ok(EstimatorOutput {
        mu_hat: mu,
        method: "naive",
        fallback,
    })
}

/// The overall sample mean, reported for every group.
pub fn pooled(summary: &TaskSummary) -> Result<EstimatorOutput> {
    let pool = pooled_value(summary)?;
    Ok(EstimatorOutput::direct(
        DVector::from_element(summary.group_count(), pool),
        "pooled",
    ))
}

/// Centered pooling: `theta_g + pooled(y - theta)`, which preserves the
/// pooled mean while keeping the shape of `theta`.
pub fn pooled_centered(summary: &TaskSummary, theta: &DVector<f64>) -> Result<EstimatorOutput> {
    let total = summary.total_count();
    if total == 0 {
        return Err(Error::AllGroupsEmpty);
    }
    let mut offset = 0.0;
    for g in 0..summary.group_count() {
        offset += summary.n[g] as f64 * (summary.y[g] - theta[g]);
    }
    offset /= total as f64;
    Ok(EstimatorOutput::direct(theta.map(|t| t + offset), "pooled"))
}

/// Shrinkage factor `(1 - c/q)_+` with the `q = 0` case pinned to full
/// shrinkage, the continuity limit of the positive part.
fn positive_part_factor(c: f64, q: f64) -> f64 {
    if q > 0.0 {
        (1.0 - c / q).max(0.0)
    } else {
        0.0
    }
}

fn bock_with(
    summary: &TaskSummary,
    theta: &DVector<f64>,
    c: f64,
    method: &'static str,
) -> EstimatorOutput {
    let d = summary.group_count();
    let prec = summary.precision();
    // q = ||y - theta||^2 weighted by the precision; empty groups carry zero
    // weight and their placeholder y never enters.
    let mut q = 0.0;
    for g in 0..d {
        let r = summary.y[g] - theta[g];
        q += prec[g] * r * r;
    }
    let factor = positive_part_factor(c, q);
    let mut mu = DVector::zeros(d);
    let mut fallback = vec![false; d];
    for g in 0..d {
        if summary.is_missing(g) {
            mu[g] = theta[g];
            fallback[g] = true;
        } else {
            mu[g] = theta[g] + factor * (summary.y[g] - theta[g]);
        }
    }
    EstimatorOutput {
        mu_hat: mu,
        method,
        fallback,
    }
}

/// Positive-part shrinkage of `y` towards a fixed center `theta` with
/// constant `d - 2`.
pub fn bock(summary: &TaskSummary, theta: &DVector<f64>) -> Result<EstimatorOutput> {
    let d = summary.group_count();
    if d < 3 {
        return Err(Error::TooFewGroups {
            method: "bock",
            needed: 3,
            actual: d,
        });
    }
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: d,
            actual: theta.len(),
        });
    }
    Ok(bock_with(summary, theta, (d - 2) as f64, "bock"))
}

/// Positive-part shrinkage towards the pooled mean with constant `d - 3`,
/// the adjustment owed to the data-dependent center.
pub fn bock_pooled(summary: &TaskSummary) -> Result<EstimatorOutput> {
    let d = summary.group_count();
    if d < 4 {
        return Err(Error::TooFewGroups {
            method: "bock-pooled",
            needed: 4,
            actual: d,
        });
    }
    let pool = pooled_value(summary)?;
    let theta = DVector::from_element(d, pool);
    Ok(bock_with(summary, &theta, (d - 3) as f64, "bock-pooled"))
}

/// Precision-weighted per-group mean across all tasks, reported for every
/// task. Groups with zero total precision error out unless
/// `fallback_pooled` substitutes the all-task pooled mean.
pub fn mt_global(summaries: &[TaskSummary], fallback_pooled: bool) -> Result<EstimatorOutput> {
    if summaries.is_empty() {
        return Err(Error::NoTasks);
    }
    let d = summaries[0].group_count();
    let mut num: DVector<f64> = DVector::zeros(d);
    let mut den: DVector<f64> = DVector::zeros(d);
    for s in summaries {
        let prec = s.precision();
        for g in 0..d {
            num[g] += prec[g] * s.y[g];
            den[g] += prec[g];
        }
    }
    let mut mu = DVector::zeros(d);
    let mut fallback = vec![false; d];
    let mut pool_cache: Option<f64> = None;
    for g in 0..d {
        if den[g] > 0.0 {
            mu[g] = num[g] / den[g];
        } else if fallback_pooled {
            let pool = match pool_cache {
                Some(p) => p,
                None => {
                    let p = global_pooled_value(summaries)?;
                    pool_cache = Some(p);
                    p
                }
            };
            mu[g] = pool;
            fallback[g] = true;
        } else {
            return Err(Error::ZeroTotalPrecision { group: g + 1 });
        }
    }
    Ok(EstimatorOutput {
        mu_hat: mu,
        method: "mt-global",
        fallback,
    })
}

fn global_pooled_value(summaries: &[TaskSummary]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0u64;
    for s in summaries {
        for g in 0..s.group_count() {
            num += s.n[g] as f64 * s.y[g];
            den += s.n[g];
        }
    }
    if den == 0 {
        return Err(Error::AllGroupsEmpty);
    }
    Ok(num / den as f64)
}

/// Shifts the global estimate on each task so the task's pooled mean is
/// preserved: `theta + pooled_t(y_t - theta)` with `theta` the global
/// estimate.
pub fn mt_offset(summaries: &[TaskSummary], fallback_pooled: bool) -> Result<Vec<EstimatorOutput>> {
    let theta = mt_global(summaries, fallback_pooled)?;
    summaries
        .iter()
        .map(|s| {
            let mut out = pooled_centered(s, &theta.mu_hat)?;
            out.method = "mt-offset";
            Ok(out)
        })
        .collect()
}

/// Bock shrinkage per task with the center set from all *other* tasks:
/// leave-one-task-out precision-weighted group means, defaulting to the
/// leave-one-out pooled mean for groups with no outside data.
pub fn mt_bock(summaries: &[TaskSummary]) -> Result<Vec<EstimatorOutput>> {
    if summaries.len() < 2 {
        return Err(Error::TooFewGroups {
            method: "mt-bock",
            needed: 2,
            actual: summaries.len(),
        });
    }
    let d = summaries[0].group_count();
    let mut outputs = Vec::with_capacity(summaries.len());
    for (t, target) in summaries.iter().enumerate() {
        let mut num: DVector<f64> = DVector::zeros(d);
        let mut den: DVector<f64> = DVector::zeros(d);
        let mut pool_num = 0.0;
        let mut pool_den = 0u64;
        for (s, other) in summaries.iter().enumerate() {
            if s == t {
                continue;
            }
            let prec = other.precision();
            for g in 0..d {
                num[g] += prec[g] * other.y[g];
                den[g] += prec[g];
                pool_num += other.n[g] as f64 * other.y[g];
                pool_den += other.n[g];
            }
        }
        if pool_den == 0 {
            return Err(Error::AllGroupsEmpty);
        }
        let pool = pool_num / pool_den as f64;
        let theta = DVector::from_fn(d, |g, _| if den[g] > 0.0 { num[g] / den[g] } else { pool });
        let mut out = bock(target, &theta)?;
        out.method = "mt-bock";
        outputs.push(out);
    }
    Ok(outputs)
}
