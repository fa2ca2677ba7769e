//! `ablate`: sweep one experimental knob (interaction order, task count,
//! or task-similarity mixing) over synthetic multi-task trials.

use clap::Args;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use suremap::prior::{build_structure, DEFAULT_GROUP_LIMIT};
use suremap::{GroundTruth, RecordBatch, SummarizeConfig};

use crate::benchmark::{mean_and_ci, score_methods, MetricKind, TrialScores};
use crate::error::{CliError, CliResult};
use crate::methods::{EstimatorFlags, Method};
use crate::rng::stream;
use crate::simulate::{parse_count_range, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    #[value(name = "max-order")]
    MaxOrder,
    Tasks,
    Alpha,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::MaxOrder => "max-order",
            SweepKind::Tasks => "tasks",
            SweepKind::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub sweep: SweepKind,
    /// Sweep values (orders, task counts, or mixing probabilities)
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    pub values: Vec<String>,
    /// Inline attribute spec for the synthetic space
    #[arg(long)]
    pub attrs: String,
    /// Base task count (overridden by the `tasks` sweep)
    #[arg(long, default_value_t = 5)]
    pub tasks: usize,
    #[arg(long, value_delimiter = ',')]
    pub tau2: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub upsilon2: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Per-group count range `lo:hi` for the synthetic draws
    #[arg(long, default_value = "2:8")]
    pub count_range: String,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 40)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "mae")]
    pub metric: MetricKind,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gtol: f64,
    #[arg(long)]
    pub variant: Option<crate::estimate::CliVariant>,
    #[arg(long)]
    pub allow_negative_center: bool,
    #[arg(long)]
    pub multistart: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepResult {
    pub sweep_value: String,
    pub method: &'static str,
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub values: Vec<f64>,
    /// Mean count of nonzero fitted variance parameters (tuned methods).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_active_tau2: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AblationReport {
    pub sweep: &'static str,
    pub metric: &'static str,
    pub seed: u64,
    pub trials: usize,
    pub results: Vec<SweepResult>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep_value,method,trial,metric_value\n");
        for r in &self.results {
            for (trial, v) in r.values.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", r.sweep_value, r.method, trial, v));
            }
        }
        out
    }
}

enum SweepValue {
    Order(i32),
    Tasks(usize),
    Alpha(f64),
}

fn parse_values(kind: SweepKind, raw: &[String]) -> CliResult<Vec<SweepValue>> {
    raw.iter()
        .map(|v| match kind {
            SweepKind::MaxOrder => v
                .parse::<i32>()
                .map(SweepValue::Order)
                .map_err(|_| CliError::usage(format!("bad order `{v}`"))),
            SweepKind::Tasks => {
                let t = v
                    .parse::<usize>()
                    .map_err(|_| CliError::usage(format!("bad task count `{v}`")))?;
                if t < 2 {
                    return Err(CliError::usage("task-count sweep values must be >= 2"));
                }
                Ok(SweepValue::Tasks(t))
            }
            SweepKind::Alpha => {
                let a = v
                    .parse::<f64>()
                    .map_err(|_| CliError::usage(format!("bad alpha `{v}`")))?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(CliError::usage("alpha must lie in [0, 1]"));
                }
                Ok(SweepValue::Alpha(a))
            }
        })
        .collect()
}

/// One synthetic trial at a sweep setting: draw the hierarchy, expand to
/// records, optionally reassign each record to a random task with
/// probability `alpha`, summarize, and score every method against the
/// drawn truth. `key` is (seed, sweep index, trial index).
fn run_trial(
    spec: &SyntheticSpec,
    alpha: f64,
    methods: &[Method],
    flags: &EstimatorFlags,
    metric: MetricKind,
    key: (u64, usize, usize),
) -> CliResult<TrialScores> {
    let (seed, sweep_idx, trial) = key;
    let path = [20 + sweep_idx as u64, trial as u64];
    let draw = crate::simulate::generate_with_streams(spec, seed, &path);
    let d = spec.space.group_count();

    // expand to records at the true noise level
    let mut rng_rows = stream(seed, &[30, sweep_idx as u64, trial as u64]);
    let mut batches: Vec<RecordBatch> = (0..spec.tasks)
        .map(|_| RecordBatch::new(spec.space.clone()))
        .collect();
    use rand_distr::StandardNormal;
    for (t, summary) in draw.summaries.iter().enumerate() {
        for g in 0..d {
            for _ in 0..summary.n[g] {
                let value =
                    draw.mu[t][g] + spec.sigma2.sqrt() * rng_rows.sample::<f64, _>(StandardNormal);
                let target = if alpha > 0.0 && rng_rows.random::<f64>() < alpha {
                    rng_rows.random_range(0..spec.tasks)
                } else {
                    t
                };
                batches[target].push_group(g, value);
            }
        }
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(CliError::data(
            "a task lost all its records during similarity mixing; rerun with more data",
        ));
    }
    let config = SummarizeConfig {
        sigma2_floor: Some(1e-12),
        sigma2_fallback: Some(spec.sigma2),
    };
    let summaries = suremap::summary::summarize_multi(&batches, &config)?;
    let truths: Vec<GroundTruth> = draw
        .mu
        .iter()
        .map(|mu| GroundTruth::exact(mu.clone()))
        .collect();
    let structure = build_structure(spec.space.clone(), DEFAULT_GROUP_LIMIT)?;
    score_methods(methods, &summaries, &truths, &structure, flags, metric)
}

pub fn run(args: &AblateArgs, seed: u64) -> CliResult<AblationReport> {
    let values = parse_values(args.sweep, &args.values)?;
    let space = std::sync::Arc::new(crate::io::parse_attrs_spec(&args.attrs)?);
    let m = 1usize << space.attribute_count();
    if args.tau2.len() != m {
        return Err(CliError::usage(format!(
            "--tau2 must have {m} entries (one per attribute subset)"
        )));
    }
    if let Some(u) = &args.upsilon2 {
        if u.len() != m {
            return Err(CliError::usage(format!(
                "--upsilon2 must have {m} entries (one per attribute subset)"
            )));
        }
    }
    if args.trials < 2 {
        return Err(CliError::usage("at least 2 trials are required"));
    }
    let (count_min, count_max) = parse_count_range(&args.count_range)?;
    let base_spec = SyntheticSpec {
        space,
        tasks: args.tasks,
        tau2: args.tau2.clone(),
        upsilon2: args.upsilon2.clone(),
        theta: None,
        sigma2: args.sigma2,
        count_min,
        count_max,
    };
    let base_flags = EstimatorFlags {
        max_iter: args.max_iter,
        gtol: args.gtol,
        max_order: None,
        variant: args.variant.map(Into::into).unwrap_or_default(),
        allow_negative_center: args.allow_negative_center,
        multistart: args.multistart,
        fallback_pooled: false,
    };

    // resolved (spec, flags, alpha, label) per sweep value
    let settings: Vec<(SyntheticSpec, EstimatorFlags, f64, String)> = values
        .iter()
        .zip(&args.values)
        .map(|(v, raw)| {
            let mut spec = base_spec.clone();
            let mut flags = base_flags.clone();
            let mut alpha = 0.0;
            match v {
                SweepValue::Order(l) => flags.max_order = Some(*l),
                SweepValue::Tasks(t) => spec.tasks = *t,
                SweepValue::Alpha(a) => alpha = *a,
            }
            (spec, flags, alpha, raw.clone())
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..args.trials).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::data(e.to_string()))?;
    let outcomes: Vec<CliResult<TrialScores>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(sweep_idx, trial)| {
                let (spec, flags, alpha, _) = &settings[sweep_idx];
                run_trial(
                    spec,
                    *alpha,
                    &args.methods,
                    flags,
                    args.metric,
                    (seed, sweep_idx, trial),
                )
            })
            .collect()
    });

    // scores[sweep][method][trial]
    let mut scores = vec![vec![vec![0.0; args.trials]; args.methods.len()]; settings.len()];
    let mut actives = vec![vec![vec![None; args.trials]; args.methods.len()]; settings.len()];
    for (&(sweep_idx, trial), outcome) in jobs.iter().zip(outcomes) {
        for (m_idx, (value, active)) in outcome?.into_iter().enumerate() {
            scores[sweep_idx][m_idx][trial] = value;
            actives[sweep_idx][m_idx][trial] = active;
        }
    }

    let mut results = Vec::new();
    for (sweep_idx, (_, _, _, label)) in settings.iter().enumerate() {
        for (m_idx, method) in args.methods.iter().enumerate() {
            let values = scores[sweep_idx][m_idx].clone();
            let (mean, ci_halfwidth) = mean_and_ci(&values);
            let active_vals: Vec<f64> = actives[sweep_idx][m_idx]
                .iter()
                .filter_map(|a| *a)
                .collect();
            let mean_active_tau2 = if active_vals.is_empty() {
                None
            } else {
                Some(active_vals.iter().sum::<f64>() / active_vals.len() as f64)
            };
            results.push(SweepResult {
                sweep_value: label.clone(),
                method: method.name(),
                mean,
                ci_halfwidth,
                values,
                mean_active_tau2,
            });
        }
    }

    Ok(AblationReport {
        sweep: args.sweep.name(),
        metric: args.metric.name(),
        seed,
        trials: args.trials,
        results,
    })
}
