//! `simulate`: draw synthetic multi-task data from the hierarchical
//! additive-effects model and emit summaries together with the true means.

use std::sync::Arc;

use clap::Args;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use suremap::prior::subset_class_index;
use suremap::{AttributeSpace, TaskSummary};

use crate::error::{CliError, CliResult};
use crate::io::{self, SummaryFile};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Inline attribute spec, e.g. `sex=F|M;age=a|b|c`
    #[arg(long)]
    pub attrs: String,
    #[arg(long, default_value_t = 1)]
    pub tasks: usize,
    /// True per-subset variances, ascending-bitmask order (length 2^k)
    #[arg(long, value_delimiter = ',')]
    pub tau2: Vec<f64>,
    /// Hyperprior variances used to draw the shared center
    #[arg(long, value_delimiter = ',')]
    pub upsilon2: Option<Vec<f64>>,
    /// Explicit shared center (default: zero, unless --upsilon2 draws one)
    #[arg(long, value_delimiter = ',', conflicts_with = "upsilon2")]
    pub theta: Option<Vec<f64>>,
    /// True noise variance
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Per-group count range `lo:hi` (inclusive, uniform)
    #[arg(long, default_value = "1:5")]
    pub count_range: String,
}

/// The generative specification, decoupled from flag parsing so the
/// benchmark-style commands can reuse it.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub space: Arc<AttributeSpace>,
    pub tasks: usize,
    pub tau2: Vec<f64>,
    pub upsilon2: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub sigma2: f64,
    pub count_min: u64,
    pub count_max: u64,
}

pub fn parse_count_range(raw: &str) -> CliResult<(u64, u64)> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| CliError::usage("count range must look like lo:hi"))?;
    let lo: u64 = lo
        .parse()
        .map_err(|_| CliError::usage("count range bounds must be integers"))?;
    let hi: u64 = hi
        .parse()
        .map_err(|_| CliError::usage("count range bounds must be integers"))?;
    if lo == 0 || hi < lo {
        return Err(CliError::usage("count range must satisfy 1 <= lo <= hi"));
    }
    Ok((lo, hi))
}

impl SyntheticSpec {
    pub fn from_args(args: &SimulateArgs) -> CliResult<Self> {
        let space = Arc::new(io::parse_attrs_spec(&args.attrs)?);
        let m = 1usize << space.attribute_count();
        let check_len = |v: &Vec<f64>, what: &str| -> CliResult<()> {
            if v.len() != m {
                return Err(CliError::usage(format!(
                    "{what} must have {m} entries (one per attribute subset)"
                )));
            }
            if v.iter().any(|&t| t < 0.0) {
                return Err(CliError::usage(format!("{what} entries must be >= 0")));
            }
            Ok(())
        };
        check_len(&args.tau2, "--tau2")?;
        if let Some(u) = &args.upsilon2 {
            check_len(u, "--upsilon2")?;
        }
        if let Some(t) = &args.theta {
            if t.len() != space.group_count() {
                return Err(CliError::usage(format!(
                    "--theta must have {} entries (one per group)",
                    space.group_count()
                )));
            }
        }
        if args.sigma2 <= 0.0 {
            return Err(CliError::usage("--sigma2 must be positive"));
        }
        if args.tasks == 0 {
            return Err(CliError::usage("--tasks must be at least 1"));
        }
        let (count_min, count_max) = parse_count_range(&args.count_range)?;
        Ok(SyntheticSpec {
            space,
            tasks: args.tasks,
            tau2: args.tau2.clone(),
            upsilon2: args.upsilon2.clone(),
            theta: args.theta.clone(),
            sigma2: args.sigma2,
            count_min,
            count_max,
        })
    }
}

/// One zero-mean draw from the additive intersectional-effects prior:
/// for every subset `A` an i.i.d. standard normal tensor `Z_A` indexed by
/// the class combinations of `A`, summed as `sum_A sqrt(tau2_A) Z_{A;g_A}`.
pub fn draw_effects(space: &AttributeSpace, tau2: &[f64], rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = space.group_count();
    let k = space.attribute_count();
    let mut mu = DVector::zeros(d);
    for (mask, &t) in tau2.iter().enumerate() {
        debug_assert!(mask < 1 << k);
        if t == 0.0 {
            continue;
        }
        let cells: usize = space
            .level_counts()
            .iter()
            .enumerate()
            .filter(|(a, _)| mask >> a & 1 == 1)
            .map(|(_, &da)| da)
            .product();
        let z: Vec<f64> = (0..cells).map(|_| rng.sample(StandardNormal)).collect();
        let scale = t.sqrt();
        for g in 0..d {
            mu[g] += scale * z[subset_class_index(space, g, mask)];
        }
    }
    mu
}

/// The full synthetic draw: the shared center, the per-task true means,
/// counts, and observed summaries at the true noise level.
pub struct SyntheticDraw {
    pub theta: DVector<f64>,
    pub mu: Vec<DVector<f64>>,
    pub summaries: Vec<TaskSummary>,
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> SyntheticDraw {
    generate_with_streams(spec, seed, &[])
}

/// Draw with extra stream-path components so harness trials stay
/// independent.
pub fn generate_with_streams(spec: &SyntheticSpec, seed: u64, path: &[u64]) -> SyntheticDraw {
    let d = spec.space.group_count();
    let mk = |tag: u64, task: u64| {
        let mut full = vec![tag, task];
        full.extend_from_slice(path);
        crate::rng::stream(seed, &full)
    };
    let theta = if let Some(explicit) = &spec.theta {
        DVector::from_row_slice(explicit)
    } else if let Some(ups) = &spec.upsilon2 {
        draw_effects(&spec.space, ups, &mut mk(0, 0))
    } else {
        DVector::zeros(d)
    };
    let mut mu = Vec::with_capacity(spec.tasks);
    let mut summaries = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut rng_mu = mk(1, t as u64);
        let mu_t = &theta + draw_effects(&spec.space, &spec.tau2, &mut rng_mu);
        let mut rng_n = mk(2, t as u64);
        let n: Vec<u64> = (0..d)
            .map(|_| rng_n.random_range(spec.count_min..=spec.count_max))
            .collect();
        let mut rng_y = mk(3, t as u64);
        let y = DVector::from_fn(d, |g, _| {
            let std = (spec.sigma2 / n[g] as f64).sqrt();
            mu_t[g] + std * rng_y.sample::<f64, _>(StandardNormal)
        });
        summaries.push(TaskSummary::new(spec.space.clone(), y, n, spec.sigma2));
        mu.push(mu_t);
    }
    SyntheticDraw {
        theta,
        mu,
        summaries,
    }
}

pub fn run(args: &SimulateArgs, seed: u64) -> CliResult<SummaryFile> {
    let spec = SyntheticSpec::from_args(args)?;
    let draw = generate(&spec, seed);
    let tasks: Vec<(String, TaskSummary)> = draw
        .summaries
        .into_iter()
        .enumerate()
        .map(|(t, s)| (format!("t{}", t + 1), s))
        .collect();
    let mut file = SummaryFile::from_summaries(&spec.space, &tasks, spec.sigma2);
    file.truth = Some(
        draw.mu
            .iter()
            .map(|m| m.iter().cloned().collect())
            .collect(),
    );
    Ok(file)
}
