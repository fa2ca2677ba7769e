//! `estimate`: dispatch a summary JSON to one estimator and emit the
//! estimates (plus fit details for the tuned methods).

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use suremap::objectives::{mt_estimate, Variant};
use suremap::oracle::{ridge_multi, ridge_single};
use suremap::prior::{build_structure, subset_labels, DEFAULT_GROUP_LIMIT};
use suremap::{AttributeSpace, TaskSummary};

use crate::error::{CliError, CliResult};
use crate::io::SummaryFile;
use crate::methods::{run_method, EstimatorFlags, Method};

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Summary JSON produced by `summarize` or `simulate`
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gtol: f64,
    /// Zero out interactions above this order (the full set is kept)
    #[arg(long, allow_hyphen_values = true)]
    pub max_order: Option<i32>,
    /// Multi-task center estimator
    #[arg(long)]
    pub variant: Option<CliVariant>,
    /// Skip the nonnegativity correction of the fitted center
    #[arg(long)]
    pub allow_negative_center: bool,
    /// Retry the fit from rescaled starting points
    #[arg(long)]
    pub multistart: bool,
    /// Allow empty groups to fall back to globally pooled values
    #[arg(long)]
    pub fallback_pooled: bool,
    /// Cross-check tuned estimates against the ridge-regression route
    #[arg(long)]
    pub verify_oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CliVariant {
    Metamap,
    Suresolve,
}

impl From<CliVariant> for Variant {
    fn from(v: CliVariant) -> Self {
        match v {
            CliVariant::Metamap => Variant::MetaMap,
            CliVariant::Suresolve => Variant::SureSolve,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TaskEstimateJson {
    pub task: String,
    pub mu_hat: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct EstimatesFile {
    pub method: &'static str,
    pub estimates: Vec<TaskEstimateJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upsilon2_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_discrepancy: Option<f64>,
}

pub fn validate_flags(args: &EstimateArgs) -> CliResult<EstimatorFlags> {
    let tuned = args.method.is_suremap();
    if !tuned {
        let offending = [
            (args.variant.is_some(), "--variant"),
            (args.max_order.is_some(), "--max-order"),
            (args.allow_negative_center, "--allow-negative-center"),
            (args.multistart, "--multistart"),
            (args.verify_oracle, "--verify-oracle"),
        ];
        for (set, flag) in offending {
            if set {
                return Err(CliError::usage(format!(
                    "{flag} only applies to the tuned methods (suremap, mt-suremap), not {}",
                    args.method.name()
                )));
            }
        }
    }
    let variant: Variant = args.variant.map(Into::into).unwrap_or_default();
    if args.verify_oracle && variant == Variant::SureSolve {
        return Err(CliError::usage(
            "--verify-oracle uses the ridge formulation, which matches the metamap variant only",
        ));
    }
    Ok(EstimatorFlags {
        max_iter: args.max_iter,
        gtol: args.gtol,
        max_order: args.max_order,
        variant,
        allow_negative_center: args.allow_negative_center,
        multistart: args.multistart,
        fallback_pooled: args.fallback_pooled,
    })
}

/// Refit the tuned estimates at interior-clamped parameters through both
/// the shrinkage route and the ridge-regression route, and report the
/// worst sup-norm discrepancy.
fn oracle_discrepancy(
    method: Method,
    space: &AttributeSpace,
    summaries: &[TaskSummary],
    tau2: &[f64],
    upsilon2: Option<&[f64]>,
) -> CliResult<f64> {
    let structure = build_structure(std::sync::Arc::new(space.clone()), DEFAULT_GROUP_LIMIT)?;
    let clamp = |params: &[f64]| -> Vec<f64> { params.iter().map(|&t| t.max(1e-6)).collect() };
    let tau2 = clamp(tau2);
    let mut worst = 0.0f64;
    match method {
        Method::Suremap => {
            for summary in summaries {
                let ridge = ridge_single(summary, &structure, &tau2)?;
                let direct = suremap::objectives::map_estimate_params(
                    summary,
                    &nalgebra::DVector::zeros(summary.group_count()),
                    &structure,
                    &tau2,
                )?;
                worst = worst.max((ridge.mu_hat - direct.mu_hat).abs().max());
            }
        }
        Method::MtSuremap => {
            let ups = clamp(upsilon2.unwrap_or(&vec![0.0; tau2.len()]));
            let ridge = ridge_multi(summaries, &structure, &tau2, &ups)?;
            let direct = mt_estimate(summaries, &structure, &tau2, &ups, Variant::MetaMap, false)?;
            for (r, d) in ridge.iter().zip(&direct) {
                worst = worst.max((r.mu_hat.clone() - &d.mu_hat).abs().max());
            }
        }
        _ => unreachable!("verify-oracle is rejected for closed-form methods"),
    }
    Ok(worst)
}

pub fn run(args: &EstimateArgs) -> CliResult<EstimatesFile> {
    let flags = validate_flags(args)?;
    let file = SummaryFile::load(&args.summary)?;
    let (space, tasks) = file.to_summaries()?;
    let ids: Vec<String> = tasks.iter().map(|(id, _)| id.clone()).collect();
    let summaries: Vec<TaskSummary> = tasks.into_iter().map(|(_, s)| s).collect();
    let structure = build_structure(space.clone(), DEFAULT_GROUP_LIMIT)?;
    let output = run_method(args.method, &summaries, &structure, &flags)?;

    let estimates = ids
        .iter()
        .zip(&output.mu_hat)
        .map(|(id, mu)| TaskEstimateJson {
            task: id.clone(),
            mu_hat: mu.iter().cloned().collect(),
        })
        .collect();

    let mut out = EstimatesFile {
        method: args.method.name(),
        estimates,
        tau2_hat: None,
        upsilon2_hat: None,
        theta_hat: None,
        objective: None,
        iterations: None,
        status: None,
        subset_labels: None,
        oracle_discrepancy: None,
    };

    if let Some(fit) = output.fit() {
        out.tau2_hat = Some(fit.tau2_hat.clone());
        out.upsilon2_hat = fit.upsilon2_hat.clone();
        out.objective = Some(fit.objective);
        out.iterations = Some(fit.iterations);
        out.status = Some(fit.status.as_str());
        out.subset_labels = Some(subset_labels(&space));
        if args.method == Method::MtSuremap {
            out.theta_hat = Some(fit.theta_hat.iter().cloned().collect());
        }
        if args.verify_oracle {
            out.oracle_discrepancy = Some(oracle_discrepancy(
                args.method,
                &space,
                &summaries,
                &fit.tau2_hat,
                fit.upsilon2_hat.as_deref(),
            )?);
        }
    }
    Ok(out)
}
