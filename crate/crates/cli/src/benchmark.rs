//! `benchmark`: subsample-with-replacement trials against the full-data
//! ground truth, scored per method and rate with normal-approximation
//! confidence intervals.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use suremap::prior::{build_structure, PriorStructure, DEFAULT_GROUP_LIMIT};
use suremap::summary::{mae, rmse, weighted_mse};
use suremap::{GroundTruth, SummarizeConfig, TaskSummary};

use crate::error::{CliError, CliResult};
use crate::io::{self, RawData, RawRow};
use crate::methods::{run_method, EstimatorFlags, Method};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricKind {
    Mae,
    Rmse,
    #[value(name = "weighted-mse")]
    WeightedMse,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mae => "mae",
            MetricKind::Rmse => "rmse",
            MetricKind::WeightedMse => "weighted-mse",
        }
    }

    pub fn score(
        &self,
        mu_hat: &DVector<f64>,
        truth: &GroundTruth,
        n: &[u64],
    ) -> suremap::Result<f64> {
        match self {
            MetricKind::Mae => mae(mu_hat, truth),
            MetricKind::Rmse => rmse(mu_hat, truth),
            MetricKind::WeightedMse => weighted_mse(mu_hat, truth, n),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Raw record CSV
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub attrs: Option<String>,
    #[arg(long, conflicts_with = "attrs")]
    pub space: Option<PathBuf>,
    /// Summarize labeled scores into per-group AUC instead of means
    #[arg(long)]
    pub auc: bool,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    /// Subsampling fractions in (0, 1]
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    /// Trials per rate (default 200 single-task, 40 multi-task)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Minimum full-data group count for ground-truth inclusion
    #[arg(long, default_value_t = 40)]
    pub truth_threshold: u64,
    #[arg(long, value_enum, default_value = "mae")]
    pub metric: MetricKind,
    /// Worker threads for the trial fan-out (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gtol: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub max_order: Option<i32>,
    #[arg(long)]
    pub variant: Option<crate::estimate::CliVariant>,
    #[arg(long)]
    pub allow_negative_center: bool,
    #[arg(long)]
    pub multistart: bool,
    #[arg(long)]
    pub fallback_pooled: bool,
}

#[derive(Debug, Serialize)]
pub struct MethodRateResult {
    pub method: &'static str,
    pub rate: f64,
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct PerTaskResult {
    pub method: &'static str,
    pub rate: f64,
    pub task: String,
    pub mean: f64,
    pub improvement_vs_naive: f64,
}

#[derive(Debug, Serialize)]
pub struct TrialReport {
    pub metric: &'static str,
    pub seed: u64,
    pub trials: usize,
    pub truth_threshold: u64,
    pub rates: Vec<f64>,
    pub methods: Vec<&'static str>,
    pub results: Vec<MethodRateResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_task: Vec<PerTaskResult>,
}

impl TrialReport {
    /// Flat CSV with the frozen schema `method,rate,trial,metric_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rate,trial,metric_value\n");
        for r in &self.results {
            for (trial, v) in r.values.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", r.method, r.rate, trial, v));
            }
        }
        out
    }
}

pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Ground truth per task from the full data (means or AUC), with the
/// count-threshold inclusion mask.
fn ground_truths(data: &RawData, threshold: u64) -> CliResult<Vec<GroundTruth>> {
    let d = data.space.group_count();
    let by_task = data.rows_by_task();
    let mut truths = Vec::with_capacity(by_task.len());
    for (rows, id) in by_task.iter().zip(&data.task_ids) {
        let truth = if data.auc {
            let mut neg: Vec<Vec<f64>> = vec![Vec::new(); d];
            let mut pos: Vec<Vec<f64>> = vec![Vec::new(); d];
            for row in rows {
                if row.label == Some(true) {
                    pos[row.group].push(row.value);
                } else {
                    neg[row.group].push(row.value);
                }
            }
            let mut mu = DVector::zeros(d);
            let mut included = vec![false; d];
            for g in 0..d {
                let total = (neg[g].len() + pos[g].len()) as u64;
                if !neg[g].is_empty() && !pos[g].is_empty() {
                    mu[g] = suremap::summary::mann_whitney_auc(&neg[g], &pos[g])?;
                    included[g] = total >= threshold;
                }
            }
            GroundTruth { mu, included }
        } else {
            let mut sums = vec![0.0; d];
            let mut counts = vec![0u64; d];
            for row in rows {
                sums[row.group] += row.value;
                counts[row.group] += 1;
            }
            let mu = DVector::from_fn(d, |g, _| {
                if counts[g] > 0 {
                    sums[g] / counts[g] as f64
                } else {
                    0.0
                }
            });
            let included = counts.iter().map(|&c| c >= threshold).collect();
            GroundTruth { mu, included }
        };
        if truth.included_count() == 0 {
            return Err(CliError::data(format!(
                "task `{id}`: no group reaches the ground-truth threshold {threshold}"
            )));
        }
        truths.push(truth);
    }
    Ok(truths)
}

/// Everything one trial needs; shared read-only across workers.
struct TrialContext<'a> {
    data: &'a RawData,
    rows_by_task: Vec<Vec<&'a RawRow>>,
    truths: &'a [GroundTruth],
    structure: &'a PriorStructure,
    methods: &'a [Method],
    flags: &'a EstimatorFlags,
    metric: MetricKind,
    config: SummarizeConfig,
    seed: u64,
}

/// Resample every task with replacement and summarize.
fn resample_summaries(
    ctx: &TrialContext,
    rate: f64,
    rate_idx: usize,
    trial: usize,
) -> CliResult<Vec<TaskSummary>> {
    let mut resampled: Vec<RawRow> = Vec::new();
    for (task_idx, rows) in ctx.rows_by_task.iter().enumerate() {
        let mut rng = stream(
            ctx.seed,
            &[10, trial as u64, rate_idx as u64, task_idx as u64],
        );
        let m = ((rate * rows.len() as f64).ceil() as usize).max(1);
        for _ in 0..m {
            let pick = rows[rng.random_range(0..rows.len())];
            resampled.push(pick.clone());
        }
    }
    let tasks = if ctx.data.auc {
        io::auc_summaries_from_rows(&ctx.data.space, &ctx.data.task_ids, resampled.iter())?
    } else {
        io::summaries_from_rows(
            &ctx.data.space,
            &ctx.data.task_ids,
            resampled.iter(),
            &ctx.config,
        )?
    };
    Ok(tasks.into_iter().map(|(_, s)| s).collect())
}

/// Metric value per (method, task) for one trial.
fn run_trial(
    ctx: &TrialContext,
    rate: f64,
    rate_idx: usize,
    trial: usize,
) -> CliResult<Vec<Vec<f64>>> {
    let summaries = resample_summaries(ctx, rate, rate_idx, trial)?;
    let mut per_method = Vec::with_capacity(ctx.methods.len());
    for &method in ctx.methods {
        let output = run_method(method, &summaries, ctx.structure, ctx.flags)?;
        let mut per_task = Vec::with_capacity(summaries.len());
        for (t, mu) in output.mu_hat.iter().enumerate() {
            per_task.push(ctx.metric.score(mu, &ctx.truths[t], &summaries[t].n)?);
        }
        per_method.push(per_task);
    }
    Ok(per_method)
}

pub fn validate(args: &BenchmarkArgs, multi_task: bool) -> CliResult<()> {
    if args.methods.is_empty() {
        return Err(CliError::usage("at least one method is required"));
    }
    if args.rates.is_empty() || args.rates.iter().any(|&r| !(0.0 < r && r <= 1.0)) {
        return Err(CliError::usage("rates must lie in (0, 1]"));
    }
    let mut sorted = args.rates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted != args.rates {
        return Err(CliError::usage("rates must be sorted ascending"));
    }
    if !multi_task {
        if let Some(m) = args.methods.iter().find(|m| m.is_multi_task()) {
            return Err(CliError::usage(format!(
                "{} requires a multi-task dataset (a `task` column with several ids)",
                m.name()
            )));
        }
    }
    if let Some(t) = args.trials {
        if t < 2 {
            return Err(CliError::usage(
                "at least 2 trials are required for confidence intervals",
            ));
        }
    }
    Ok(())
}

pub fn run(args: &BenchmarkArgs, seed: u64) -> CliResult<TrialReport> {
    let space = crate::summarize::resolve_space(&args.attrs, &args.space)?;
    let data = io::read_raw_csv(&args.input, space, args.auc)?;
    let multi = data.is_multi_task();
    validate(args, multi)?;
    let trials = args.trials.unwrap_or(if multi { 40 } else { 200 });
    let flags = EstimatorFlags {
        max_iter: args.max_iter,
        gtol: args.gtol,
        max_order: args.max_order,
        variant: args.variant.map(Into::into).unwrap_or_default(),
        allow_negative_center: args.allow_negative_center,
        multistart: args.multistart,
        fallback_pooled: args.fallback_pooled,
    };

    let truths = ground_truths(&data, args.truth_threshold)?;
    let structure = build_structure(data.space.clone(), DEFAULT_GROUP_LIMIT)?;

    // trial resamples can be degenerate at tiny rates; fall back to the
    // full-data variance estimate
    let full_sigma2 = if data.auc {
        None
    } else {
        let cfg = SummarizeConfig::default();
        let tasks = io::summaries_from_rows(&data.space, &data.task_ids, data.rows.iter(), &cfg)?;
        Some(tasks[0].1.sigma2)
    };
    let config = SummarizeConfig {
        sigma2_floor: Some(1e-12),
        sigma2_fallback: full_sigma2,
    };

    let ctx = TrialContext {
        data: &data,
        rows_by_task: data.rows_by_task(),
        truths: &truths,
        structure: &structure,
        methods: &args.methods,
        flags: &flags,
        metric: args.metric,
        config,
        seed,
    };

    // fan trials out over a dedicated pool; results land in rate/trial
    // order so aggregation is scheduling-independent
    let jobs: Vec<(usize, usize)> = (0..args.rates.len())
        .flat_map(|r| (0..trials).map(move |t| (r, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::data(e.to_string()))?;
    let outcomes: Vec<CliResult<Vec<Vec<f64>>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(rate_idx, trial)| run_trial(&ctx, args.rates[rate_idx], rate_idx, trial))
            .collect()
    });

    // scores[rate][method][trial][task]
    let t_count = data.task_ids.len();
    let mut scores =
        vec![vec![vec![vec![0.0; t_count]; trials]; args.methods.len()]; args.rates.len()];
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let (rate_idx, trial) = *job;
        let per_method = outcome?;
        for (m, per_task) in per_method.into_iter().enumerate() {
            scores[rate_idx][m][trial] = per_task;
        }
    }

    let mut results = Vec::new();
    let mut per_task = Vec::new();
    let naive_idx = args.methods.iter().position(|&m| m == Method::Naive);
    for (rate_idx, &rate) in args.rates.iter().enumerate() {
        for (m, &method) in args.methods.iter().enumerate() {
            let values: Vec<f64> = scores[rate_idx][m]
                .iter()
                .map(|per_task| per_task.iter().sum::<f64>() / t_count as f64)
                .collect();
            let (mean, ci_halfwidth) = mean_and_ci(&values);
            results.push(MethodRateResult {
                method: method.name(),
                rate,
                mean,
                ci_halfwidth,
                values,
            });
            if multi {
                for (task_idx, id) in data.task_ids.iter().enumerate() {
                    let task_mean = scores[rate_idx][m]
                        .iter()
                        .map(|per_task| per_task[task_idx])
                        .sum::<f64>()
                        / trials as f64;
                    let improvement = naive_idx
                        .map(|ni| {
                            let naive_mean = scores[rate_idx][ni]
                                .iter()
                                .map(|per_task| per_task[task_idx])
                                .sum::<f64>()
                                / trials as f64;
                            naive_mean / task_mean
                        })
                        .unwrap_or(f64::NAN);
                    per_task.push(PerTaskResult {
                        method: method.name(),
                        rate,
                        task: id.clone(),
                        mean: task_mean,
                        improvement_vs_naive: improvement,
                    });
                }
            }
        }
    }

    Ok(TrialReport {
        metric: args.metric.name(),
        seed,
        trials,
        truth_threshold: args.truth_threshold,
        rates: args.rates.clone(),
        methods: args.methods.iter().map(|m| m.name()).collect(),
        results,
        per_task,
    })
}

/// Per-method (metric value, mean active parameter count) pairs for one
/// trial of the ablation harness.
pub type TrialScores = Vec<(f64, Option<f64>)>;

/// Used by `ablate`: run every method on prepared summaries and score
/// against exact truths.
pub fn score_methods(
    methods: &[Method],
    summaries: &[TaskSummary],
    truths: &[GroundTruth],
    structure: &PriorStructure,
    flags: &EstimatorFlags,
    metric: MetricKind,
) -> CliResult<TrialScores> {
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let output = run_method(method, summaries, structure, flags)?;
        let mut total = 0.0;
        for (t, mu) in output.mu_hat.iter().enumerate() {
            total += metric.score(mu, &truths[t], &summaries[t].n)?;
        }
        let active = if output.fits.is_empty() {
            None
        } else {
            let counts: Vec<f64> = output
                .fits
                .iter()
                .map(|f| f.tau2_hat.iter().filter(|&&t| t > 1e-8).count() as f64)
                .collect();
            Some(counts.iter().sum::<f64>() / counts.len() as f64)
        };
        out.push((total / summaries.len() as f64, active));
    }
    Ok(out)
}
