//! Conversion of raw per-record data into the sufficient statistics
//! `(y, n, sigma2)` consumed by every estimator, plus the scoring metrics.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::space::AttributeSpace;

/// One observation: a group (by class tuple, converted to an offset at
/// insertion time) and a metric value.
#[derive(Debug, Clone, Copy)]
pub struct Record {
    /// 0-based group offset (`group_index - 1`).
    pub group: usize,
    pub value: f64,
}

/// A batch of records for a single task.
#[derive(Debug, Clone)]
pub struct RecordBatch {
    space: Arc<AttributeSpace>,
    records: Vec<Record>,
}

impl RecordBatch {
    pub fn new(space: Arc<AttributeSpace>) -> Self {
        Self {
            space,
            records: Vec::new(),
        }
    }

    /// Append a record by 1-based class tuple; validates every class index.
    pub fn push(&mut self, classes: &[usize], value: f64) -> Result<()> {
        let g = self.space.group_index(classes)?;
        self.records.push(Record {
            group: g - 1,
            value,
        });
        Ok(())
    }

    /// Append a record by 0-based group offset (caller guarantees range).
    pub fn push_group(&mut self, group: usize, value: f64) {
        debug_assert!(group < self.space.group_count());
        self.records.push(Record { group, value });
    }

    pub fn space(&self) -> &Arc<AttributeSpace> {
        &self.space
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Options for the shared-variance estimate.
#[derive(Debug, Clone)]
pub struct SummarizeConfig {
    /// Lower bound substituted for an exactly-zero residual variance.
    /// `None` turns the floor off, making zero variance an error.
    pub sigma2_floor: Option<f64>,
    /// Fallback used when the residual degrees of freedom are not positive.
    pub sigma2_fallback: Option<f64>,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        Self {
            sigma2_floor: Some(1e-12),
            sigma2_fallback: None,
        }
    }
}

/// Per-task sufficient statistics. Empty groups carry `y = 0` with `n = 0`
/// and contribute zero precision; estimators must only consume `y` through
/// precision-weighted expressions.
#[derive(Debug, Clone)]
pub struct TaskSummary {
    pub space: Arc<AttributeSpace>,
    /// Group means, `0.0` placeholder where `n = 0`.
    pub y: DVector<f64>,
    /// Group sample counts.
    pub n: Vec<u64>,
    /// Shared noise variance.
    pub sigma2: f64,
    /// Optional per-group variance of `y_g` overriding `sigma2 / n_g`
    /// (used for statistics such as AUC whose variance is not `sigma^2/n`).
    pub variance_override: Option<DVector<f64>>,
}

impl TaskSummary {
    pub fn new(space: Arc<AttributeSpace>, y: DVector<f64>, n: Vec<u64>, sigma2: f64) -> Self {
        debug_assert_eq!(y.len(), space.group_count());
        debug_assert_eq!(n.len(), space.group_count());
        Self {
            space,
            y,
            n,
            sigma2,
            variance_override: None,
        }
    }

    pub fn group_count(&self) -> usize {
        self.space.group_count()
    }

    pub fn is_missing(&self, g: usize) -> bool {
        self.n[g] == 0
    }

    /// Diagonal of the precision matrix: `n_g / sigma2` (or `1 / var_g` when
    /// an override is present), and exactly `0` for empty groups.
    pub fn precision(&self) -> DVector<f64> {
        let d = self.group_count();
        DVector::from_fn(d, |g, _| {
            if self.n[g] == 0 {
                0.0
            } else if let Some(v) = &self.variance_override {
                1.0 / v[g]
            } else {
                self.n[g] as f64 / self.sigma2
            }
        })
    }

    pub fn total_count(&self) -> u64 {
        self.n.iter().sum()
    }
}

/// Reference means used for scoring, with the inclusion mask of groups that
/// had enough data to trust.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub mu: DVector<f64>,
    pub included: Vec<bool>,
}

impl GroundTruth {
    /// All groups included.
    pub fn exact(mu: DVector<f64>) -> Self {
        let included = vec![true; mu.len()];
        Self { mu, included }
    }

    /// Group means of `batch`, excluding groups with fewer than `threshold`
    /// records.
    pub fn from_batch(batch: &RecordBatch, threshold: u64) -> Self {
        let d = batch.space().group_count();
        let mut sums = vec![0.0; d];
        let mut counts = vec![0u64; d];
        for r in batch.records() {
            sums[r.group] += r.value;
            counts[r.group] += 1;
        }
        let mu = DVector::from_fn(d, |g, _| {
            if counts[g] > 0 {
                sums[g] / counts[g] as f64
            } else {
                0.0
            }
        });
        let included = counts.iter().map(|&c| c >= threshold).collect();
        Self { mu, included }
    }

    pub fn included_count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
}

fn group_moments(batch: &RecordBatch) -> (Vec<f64>, Vec<u64>) {
    let d = batch.space().group_count();
    let mut sums = vec![0.0; d];
    let mut counts = vec![0u64; d];
    for r in batch.records() {
        sums[r.group] += r.value;
        counts[r.group] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    (means, counts)
}

fn residual_sum(batch: &RecordBatch, means: &[f64]) -> f64 {
    batch
        .records()
        .iter()
        .map(|r| {
            let e = r.value - means[r.group];
            e * e
        })
        .sum()
}

fn finish_sigma2(
    residual: f64,
    rows: usize,
    nonempty: usize,
    config: &SummarizeConfig,
) -> Result<f64> {
    if rows <= nonempty {
        return match config.sigma2_fallback {
            Some(s) => Ok(s),
            None => Err(Error::DegenerateVariance {
                rows,
                nonempty_groups: nonempty,
            }),
        };
    }
    let sigma2 = residual / (rows - nonempty) as f64;
    match config.sigma2_floor {
        Some(floor) => Ok(sigma2.max(floor)),
        None if sigma2 > 0.0 => Ok(sigma2),
        None => Err(Error::ZeroVariance),
    }
}

/// Group means, counts, and the pooled within-group variance estimate.
///
/// The variance denominator counts only nonempty groups: empty groups
/// contribute no residuals and would otherwise deflate the estimate under
/// subsampling.
pub fn summarize(batch: &RecordBatch, config: &SummarizeConfig) -> Result<TaskSummary> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (means, counts) = group_moments(batch);
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    let residual = residual_sum(batch, &means);
    let sigma2 = finish_sigma2(residual, batch.len(), nonempty, config)?;
    Ok(TaskSummary::new(
        batch.space().clone(),
        DVector::from_vec(means),
        counts,
        sigma2,
    ))
}

/// Multi-task summarization with a single variance pooled across tasks:
/// the residual sums and degrees of freedom of every task are combined, and
/// every returned summary carries the same `sigma2`.
pub fn summarize_multi(
    batches: &[RecordBatch],
    config: &SummarizeConfig,
) -> Result<Vec<TaskSummary>> {
    if batches.is_empty() {
        return Err(Error::NoTasks);
    }
    let mut per_task = Vec::with_capacity(batches.len());
    let mut total_rows = 0usize;
    let mut total_nonempty = 0usize;
    let mut total_residual = 0.0;
    for batch in batches {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (means, counts) = group_moments(batch);
        total_rows += batch.len();
        total_nonempty += counts.iter().filter(|&&c| c > 0).count();
        total_residual += residual_sum(batch, &means);
        per_task.push((means, counts));
    }
    let sigma2 = finish_sigma2(total_residual, total_rows, total_nonempty, config)?;
    Ok(per_task
        .into_iter()
        .zip(batches)
        .map(|((means, counts), batch)| {
            TaskSummary::new(
                batch.space().clone(),
                DVector::from_vec(means),
                counts,
                sigma2,
            )
        })
        .collect())
}

/// Variance of a group's empirical AUC, from the Mann-Whitney U statistic:
/// `(n_g + 1) / (12 n_g n0 n1)` where `n0`/`n1` are the negative/positive
/// counts.
pub fn auc_group_variance(n0: u64, n1: u64) -> Result<f64> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClassGroup);
    }
    let ng = (n0 + n1) as f64;
    Ok((ng + 1.0) / (12.0 * ng * n0 as f64 * n1 as f64))
}

/// Empirical AUC of a group from its labeled scores: the Mann-Whitney
/// statistic with the half-credit tie convention.
pub fn mann_whitney_auc(negative_scores: &[f64], positive_scores: &[f64]) -> Result<f64> {
    if negative_scores.is_empty() || positive_scores.is_empty() {
        return Err(Error::SingleClassGroup);
    }
    let mut wins = 0.0;
    for &p in positive_scores {
        for &n in negative_scores {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (negative_scores.len() as f64 * positive_scores.len() as f64))
}

fn check_lengths(mu_hat: &DVector<f64>, truth: &GroundTruth) -> Result<()> {
    if mu_hat.len() != truth.mu.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate",
            expected: truth.mu.len(),
            actual: mu_hat.len(),
        });
    }
    if truth.included_count() == 0 {
        return Err(Error::EmptyInclusionMask);
    }
    Ok(())
}

/// Mean absolute error over included groups.
pub fn mae(mu_hat: &DVector<f64>, truth: &GroundTruth) -> Result<f64> {
    check_lengths(mu_hat, truth)?;
    let mut sum = 0.0;
    let mut m = 0usize;
    for g in 0..mu_hat.len() {
        if truth.included[g] {
            sum += (mu_hat[g] - truth.mu[g]).abs();
            m += 1;
        }
    }
    Ok(sum / m as f64)
}

/// Root mean squared error over included groups.
pub fn rmse(mu_hat: &DVector<f64>, truth: &GroundTruth) -> Result<f64> {
    check_lengths(mu_hat, truth)?;
    let mut sum = 0.0;
    let mut m = 0usize;
    for g in 0..mu_hat.len() {
        if truth.included[g] {
            let e = mu_hat[g] - truth.mu[g];
            sum += e * e;
            m += 1;
        }
    }
    Ok((sum / m as f64).sqrt())
}

/// Count-weighted mean squared error over included groups:
/// `(1/m) sum n_g (mu_hat_g - mu_g)^2`.
pub fn weighted_mse(mu_hat: &DVector<f64>, truth: &GroundTruth, n: &[u64]) -> Result<f64> {
    check_lengths(mu_hat, truth)?;
    if n.len() != mu_hat.len() {
        return Err(Error::DimensionMismatch {
            what: "counts",
            expected: mu_hat.len(),
            actual: n.len(),
        });
    }
    let mut sum = 0.0;
    let mut m = 0usize;
    for g in 0..mu_hat.len() {
        if truth.included[g] {
            let e = mu_hat[g] - truth.mu[g];
            sum += n[g] as f64 * e * e;
            m += 1;
        }
    }
    Ok(sum / m as f64)
}
