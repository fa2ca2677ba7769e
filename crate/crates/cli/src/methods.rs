//! Estimator registry shared by the estimate, benchmark, and ablate
//! commands.

use clap::ValueEnum;
use nalgebra::DVector;
use suremap::baselines;
use suremap::objectives::Variant;
use suremap::optimizer::{fit_multi, fit_single, FitConfig, FitResult};
use suremap::prior::PriorStructure;
use suremap::{Result, TaskSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Naive,
    Pooled,
    Bock,
    #[value(name = "bock-pooled")]
    BockPooled,
    Suremap,
    #[value(name = "mt-global")]
    MtGlobal,
    #[value(name = "mt-offset")]
    MtOffset,
    #[value(name = "mt-bock")]
    MtBock,
    #[value(name = "mt-suremap")]
    MtSuremap,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Pooled => "pooled",
            Method::Bock => "bock",
            Method::BockPooled => "bock-pooled",
            Method::Suremap => "suremap",
            Method::MtGlobal => "mt-global",
            Method::MtOffset => "mt-offset",
            Method::MtBock => "mt-bock",
            Method::MtSuremap => "mt-suremap",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        <Method as ValueEnum>::from_str(name, true).ok()
    }

    /// Multi-task methods consume all tasks jointly.
    pub fn is_multi_task(&self) -> bool {
        matches!(
            self,
            Method::MtGlobal | Method::MtOffset | Method::MtBock | Method::MtSuremap
        )
    }

    pub fn is_suremap(&self) -> bool {
        matches!(self, Method::Suremap | Method::MtSuremap)
    }
}

/// Estimator options surfaced as CLI flags.
#[derive(Debug, Clone)]
pub struct EstimatorFlags {
    pub max_iter: usize,
    pub gtol: f64,
    pub max_order: Option<i32>,
    pub variant: Variant,
    pub allow_negative_center: bool,
    pub multistart: bool,
    pub fallback_pooled: bool,
}

impl Default for EstimatorFlags {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            max_iter: fit.max_iterations,
            gtol: fit.gradient_tolerance,
            max_order: None,
            variant: Variant::MetaMap,
            allow_negative_center: false,
            multistart: false,
            fallback_pooled: false,
        }
    }
}

impl EstimatorFlags {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.max_iter,
            gradient_tolerance: self.gtol,
            max_order: self.max_order,
            variant: self.variant,
            nonneg_center: !self.allow_negative_center,
            multistart: self.multistart,
            ..FitConfig::default()
        }
    }
}

/// Per-task estimates plus the fit records when the method was tuned
/// (one per task for `suremap`, a single joint fit for `mt-suremap`).
pub struct MethodOutput {
    pub mu_hat: Vec<DVector<f64>>,
    pub fits: Vec<FitResult>,
}

impl MethodOutput {
    pub fn fit(&self) -> Option<&FitResult> {
        self.fits.first()
    }
}

/// Run one method over all tasks. Single-task methods are applied to each
/// task independently; multi-task methods see the whole collection.
pub fn run_method(
    method: Method,
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    flags: &EstimatorFlags,
) -> Result<MethodOutput> {
    let per_task = |f: &dyn Fn(&TaskSummary) -> Result<DVector<f64>>| -> Result<Vec<DVector<f64>>> {
        summaries.iter().map(f).collect()
    };
    let mu_hat = match method {
        Method::Naive => per_task(&|s| Ok(baselines::naive(s)?.mu_hat))?,
        Method::Pooled => per_task(&|s| Ok(baselines::pooled(s)?.mu_hat))?,
        Method::Bock => per_task(&|s| {
            let theta = DVector::zeros(s.group_count());
            Ok(baselines::bock(s, &theta)?.mu_hat)
        })?,
        Method::BockPooled => per_task(&|s| Ok(baselines::bock_pooled(s)?.mu_hat))?,
        Method::Suremap => {
            let config = flags.fit_config();
            let mut fits = Vec::with_capacity(summaries.len());
            for s in summaries {
                fits.push(fit_single(s, structure, &config)?);
            }
            let mu = fits.iter().map(|f| f.mu_hat[0].clone()).collect();
            return Ok(MethodOutput { mu_hat: mu, fits });
        }
        Method::MtGlobal => {
            let out = baselines::mt_global(summaries, flags.fallback_pooled)?;
            vec![out.mu_hat; summaries.len()]
        }
        Method::MtOffset => baselines::mt_offset(summaries, flags.fallback_pooled)?
            .into_iter()
            .map(|o| o.mu_hat)
            .collect(),
        Method::MtBock => baselines::mt_bock(summaries)?
            .into_iter()
            .map(|o| o.mu_hat)
            .collect(),
        Method::MtSuremap => {
            let fit = fit_multi(summaries, structure, &flags.fit_config())?;
            return Ok(MethodOutput {
                mu_hat: fit.mu_hat.clone(),
                fits: vec![fit],
            });
        }
    };
    Ok(MethodOutput {
        mu_hat,
        fits: Vec::new(),
    })
}
