//! Bound-constrained smooth minimization over the nonnegative orthant and
//! the end-to-end fit drivers for the single- and multi-task estimators.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::Result;
use crate::objectives::{
    mt_estimate, mt_objective, st_objective, theta_metamap, theta_suresolve, Variant,
};
use crate::prior::{order_is_active, shrinkage_from_params, PriorStructure};
use crate::summary::TaskSummary;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Options shared by [`minimize_bounded`], [`fit_single`], and [`fit_multi`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Sup-norm tolerance on the projected gradient.
    pub gradient_tolerance: f64,
    /// Number of curvature pairs kept by the limited-memory update.
    pub memory_pairs: usize,
    /// Highest interaction order left free (the full-set entry is always
    /// kept); `None` means no restriction.
    pub max_order: Option<i32>,
    pub variant: Variant,
    /// Clamp the fitted center at zero coordinatewise.
    pub nonneg_center: bool,
    /// Retry from four rescaled starting points and keep the best fit.
    pub multistart: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            memory_pairs: 10,
            max_order: None,
            variant: Variant::MetaMap,
            nonneg_center: true,
            multistart: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

impl ConvergenceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConvergenceStatus::Converged => "converged",
            ConvergenceStatus::MaxIterations => "max-iter",
            ConvergenceStatus::LineSearchFailure => "line-search-failure",
        }
    }
}

/// Outcome of a bound-constrained minimization.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: ConvergenceStatus,
    pub iterations: usize,
    /// Objective values at the accepted iterates, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

/// A fitted estimator: tuned variance parameters, center, per-task
/// estimates, and the optimization record.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub tau2_hat: Vec<f64>,
    pub upsilon2_hat: Option<Vec<f64>>,
    pub theta_hat: DVector<f64>,
    pub mu_hat: Vec<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub status: ConvergenceStatus,
    pub trace: Vec<f64>,
}

fn project(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    let mut norm = 0.0f64;
    for (xi, gi) in x.iter().zip(g) {
        let pg = if *xi > 0.0 { *gi } else { gi.min(0.0) };
        norm = norm.max(pg.abs());
    }
    norm
}

fn all_finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Limited-memory quasi-Newton minimization of `f` over `x >= 0` with
/// gradient projection and Armijo backtracking. The returned point is
/// feasible and its value never exceeds `f(x0)`; a non-finite evaluation or
/// a failed line search aborts with the best point seen so far.
///
/// Only the evaluation at `x0` may surface an error; later evaluation
/// failures are treated like non-finite values.
pub fn minimize_bounded<F>(mut f: F, x0: &[f64], config: &FitConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut gx) = f(&x)?;
    let mut trace = vec![fx];
    if !all_finite(fx, &gx) {
        return Ok(MinimizeResult {
            x,
            value: fx,
            status: ConvergenceStatus::LineSearchFailure,
            iterations: 0,
            trace,
        });
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0usize;

    for iter in 0..config.max_iterations {
        iterations = iter;
        if projected_gradient_norm(&x, &gx) <= config.gradient_tolerance {
            status = ConvergenceStatus::Converged;
            break;
        }

        // Coordinates pinned at the boundary with an inward-pushing gradient
        // stay fixed this iteration.
        let active: Vec<bool> = x
            .iter()
            .zip(&gx)
            .map(|(&xi, &gi)| xi <= 0.0 && gi > 0.0)
            .collect();
        let reduced_g: Vec<f64> = gx
            .iter()
            .zip(&active)
            .map(|(&g, &a)| if a { 0.0 } else { g })
            .collect();

        // two-loop recursion on the reduced gradient
        let mut dir = {
            let mut q = reduced_g.clone();
            let mut alphas = Vec::with_capacity(pairs.len());
            for (s, yv, rho) in pairs.iter().rev() {
                let alpha = rho * dot(s, &q);
                for (qi, yi) in q.iter_mut().zip(yv) {
                    *qi -= alpha * yi;
                }
                alphas.push(alpha);
            }
            if let Some((s, yv, _)) = pairs.back() {
                let sy = dot(s, yv);
                let yy = dot(yv, yv);
                if yy > 0.0 {
                    let scale = sy / yy;
                    for qi in q.iter_mut() {
                        *qi *= scale;
                    }
                }
            }
            for ((s, yv, rho), alpha) in pairs.iter().zip(alphas.into_iter().rev()) {
                let beta = rho * dot(yv, &q);
                for (qi, si) in q.iter_mut().zip(s) {
                    *qi += (alpha - beta) * si;
                }
            }
            for (qi, &a) in q.iter_mut().zip(&active) {
                if a {
                    *qi = 0.0;
                }
            }
            for qi in q.iter_mut() {
                *qi = -*qi;
            }
            q
        };

        // fall back to steepest descent when the model direction is unusable
        let descent = dot(&dir, &reduced_g);
        if !descent.is_finite() || descent >= 0.0 {
            for (di, gi) in dir.iter_mut().zip(&reduced_g) {
                *di = -gi;
            }
        }

        // projected backtracking line search
        let mut step = 1.0f64;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(&xi, &di)| xi + step * di)
                .collect();
            project(&mut cand);
            let predicted: f64 = cand
                .iter()
                .zip(&x)
                .zip(&gx)
                .map(|((&ci, &xi), &gi)| gi * (ci - xi))
                .sum();
            if predicted < 0.0 {
                match f(&cand) {
                    Ok((fc, gc)) if all_finite(fc, &gc) && fc <= fx + ARMIJO_C1 * predicted => {
                        accepted = Some((cand, fc, gc));
                        break;
                    }
                    _ => {} // treat failures as a rejected step
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            status = ConvergenceStatus::LineSearchFailure;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            if pairs.len() == config.memory_pairs {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }

        x = x_new;
        fx = f_new;
        gx = g_new;
        trace.push(fx);
    }

    if status == ConvergenceStatus::MaxIterations
        && projected_gradient_norm(&x, &gx) <= config.gradient_tolerance
    {
        status = ConvergenceStatus::Converged;
        iterations = config.max_iterations;
    }

    Ok(MinimizeResult {
        x,
        value: fx,
        status,
        iterations: iterations + 1,
        trace,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Run [`minimize_bounded`] from `x0` and, when `multistart` is on, from
/// four rescaled copies, keeping the lowest final value (first wins ties).
fn minimize_with_restarts<F>(mut f: F, x0: &[f64], config: &FitConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut best = minimize_bounded(&mut f, x0, config)?;
    if config.multistart {
        for scale in [0.01, 0.1, 10.0, 100.0] {
            let start: Vec<f64> = x0.iter().map(|v| v * scale).collect();
            let run = minimize_bounded(&mut f, &start, config)?;
            if run.value < best.value {
                best = run;
            }
        }
    }
    Ok(best)
}

/// Indices of subsets left free by the order restriction; the restricted
/// ones are pinned at zero for the whole fit.
fn free_subsets(structure: &PriorStructure, config: &FitConfig) -> Vec<usize> {
    let k = structure.space().attribute_count();
    let max_order = config.max_order.unwrap_or(k as i32);
    (0..structure.subset_count())
        .filter(|&mask| order_is_active(mask, k, max_order))
        .collect()
}

fn scatter(free: &[usize], z: &[f64], len: usize) -> Vec<f64> {
    let mut full = vec![0.0; len];
    for (&idx, &v) in free.iter().zip(z) {
        full[idx] = v;
    }
    full
}

/// Single-task fit: minimize the SURE objective over `tau2 >= 0` from the
/// identity-prior initialization, then apply the tuned MAP estimate
/// `mu = (I - A) y`.
pub fn fit_single(
    summary: &TaskSummary,
    structure: &PriorStructure,
    config: &FitConfig,
) -> Result<FitResult> {
    let m = structure.subset_count();
    let free = free_subsets(structure, config);
    let full_position = free
        .iter()
        .position(|&idx| idx == m - 1)
        .expect("the full set is always free");
    let mut z0 = vec![0.0; free.len()];
    z0[full_position] = 1.0;

    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let tau2 = scatter(&free, z, m);
        let eval = st_objective(summary, structure, &tau2)?;
        let grad = free.iter().map(|&idx| eval.gradient[idx]).collect();
        Ok((eval.value, grad))
    };
    let run = minimize_with_restarts(objective, &z0, config)?;

    let tau2_hat = scatter(&free, &run.x, m);
    let a = shrinkage_from_params(structure, &tau2_hat, &summary.precision())?;
    let mu = &summary.y - &a * &summary.y;
    Ok(FitResult {
        tau2_hat,
        upsilon2_hat: None,
        theta_hat: DVector::zeros(summary.group_count()),
        mu_hat: vec![mu],
        objective: run.value,
        iterations: run.iterations,
        status: run.status,
        trace: run.trace,
    })
}

/// Multi-task fit: jointly minimize the aggregated SURE over the free
/// parameters (`tau2` and, for the MetaMap variant, `upsilon2`), then
/// produce per-task estimates around the tuned center.
pub fn fit_multi(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    config: &FitConfig,
) -> Result<FitResult> {
    let m = structure.subset_count();
    let free = free_subsets(structure, config);
    let full_position = free
        .iter()
        .position(|&idx| idx == m - 1)
        .expect("the full set is always free");
    let blocks = match config.variant {
        Variant::MetaMap => 2,
        Variant::SureSolve => 1,
    };
    let mut z0 = vec![0.0; free.len() * blocks];
    for b in 0..blocks {
        z0[b * free.len() + full_position] = 1.0;
    }

    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let tau2 = scatter(&free, &z[..free.len()], m);
        let upsilon2 = if blocks == 2 {
            scatter(&free, &z[free.len()..], m)
        } else {
            vec![0.0; m]
        };
        let eval = mt_objective(summaries, structure, &tau2, &upsilon2, config.variant)?;
        let mut grad = Vec::with_capacity(z.len());
        for &idx in &free {
            grad.push(eval.gradient[idx]);
        }
        if blocks == 2 {
            for &idx in &free {
                grad.push(eval.gradient[m + idx]);
            }
        }
        Ok((eval.value, grad))
    };
    let run = minimize_with_restarts(objective, &z0, config)?;

    let tau2_hat = scatter(&free, &run.x[..free.len()], m);
    let upsilon2_hat = if blocks == 2 {
        Some(scatter(&free, &run.x[free.len()..], m))
    } else {
        None
    };
    let ups_for_center = upsilon2_hat.clone().unwrap_or_else(|| vec![0.0; m]);
    let center = match config.variant {
        Variant::MetaMap => theta_metamap(
            summaries,
            structure,
            &tau2_hat,
            &ups_for_center,
            config.nonneg_center,
        )?,
        Variant::SureSolve => {
            theta_suresolve(summaries, structure, &tau2_hat, config.nonneg_center)?
        }
    };
    let outputs = mt_estimate(
        summaries,
        structure,
        &tau2_hat,
        &ups_for_center,
        config.variant,
        config.nonneg_center,
    )?;
    Ok(FitResult {
        tau2_hat,
        upsilon2_hat,
        theta_hat: center.theta,
        mu_hat: outputs.into_iter().map(|o| o.mu_hat).collect(),
        objective: run.value,
        iterations: run.iterations,
        status: run.status,
        trace: run.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{build_structure, DEFAULT_GROUP_LIMIT};
    use crate::space::AttributeSpace;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn structure(dims: &[usize]) -> PriorStructure {
        let space = Arc::new(AttributeSpace::from_level_counts(dims).unwrap());
        build_structure(space, DEFAULT_GROUP_LIMIT).unwrap()
    }

    fn quadratic(
        h: DMatrix<f64>,
        c: DVector<f64>,
    ) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let xv = DVector::from_row_slice(x);
            let hx = &h * &xv;
            let value = 0.5 * xv.dot(&hx) + c.dot(&xv);
            let grad = (hx + &c).iter().cloned().collect();
            Ok((value, grad))
        }
    }

    #[test]
    fn boundary_optimum() {
        // f(x) = ||x + 1||^2: unconstrained optimum at -1, projected at 0
        let dim = 5;
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let value: f64 = x.iter().map(|v| (v + 1.0) * (v + 1.0)).sum();
            let grad = x.iter().map(|v| 2.0 * (v + 1.0)).collect();
            Ok((value, grad))
        };
        let run = minimize_bounded(f, &[1.0; 5], &FitConfig::default()).unwrap();
        assert_eq!(run.status, ConvergenceStatus::Converged);
        assert!(run.x.iter().all(|&v| v == 0.0));
        assert!((run.value - dim as f64).abs() <= 1e-12);
    }

    #[test]
    fn interior_optimum() {
        let c = [0.3, 1.7, 0.0, 2.5];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let value: f64 = x.iter().zip(&c).map(|(v, ci)| (v - ci) * (v - ci)).sum();
            let grad = x.iter().zip(&c).map(|(v, ci)| 2.0 * (v - ci)).collect();
            Ok((value, grad))
        };
        let run = minimize_bounded(f, &[1.0; 4], &FitConfig::default()).unwrap();
        for (xi, ci) in run.x.iter().zip(&c) {
            assert!((xi - ci).abs() <= 1e-8);
        }
    }

    /// Exhaustive active-set solver for `min 0.5 x'Hx + c'x` over `x >= 0`
    /// with positive definite `H`.
    fn active_set_oracle(h: &DMatrix<f64>, c: &DVector<f64>) -> (DVector<f64>, f64) {
        let dim = c.len();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for pattern in 0..(1usize << dim) {
            let free: Vec<usize> = (0..dim).filter(|i| pattern >> i & 1 == 1).collect();
            let mut x = DVector::zeros(dim);
            if !free.is_empty() {
                let mut hf = DMatrix::zeros(free.len(), free.len());
                let mut cf = DVector::zeros(free.len());
                for (r, &i) in free.iter().enumerate() {
                    cf[r] = c[i];
                    for (s, &j) in free.iter().enumerate() {
                        hf[(r, s)] = h[(i, j)];
                    }
                }
                let Some(sol) = hf.lu().solve(&(-cf)) else {
                    continue;
                };
                if sol.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (r, &i) in free.iter().enumerate() {
                    x[i] = sol[r];
                }
            }
            // KKT: gradient nonnegative on the pinned coordinates
            let grad = h * &x + c;
            if (0..dim).any(|i| !free.contains(&i) && grad[i] < -1e-9) {
                continue;
            }
            let value = 0.5 * x.dot(&(h * &x)) + c.dot(&x);
            if best.as_ref().is_none_or(|(_, v)| value < *v) {
                best = Some((x, value));
            }
        }
        best.expect("PD quadratic always has a KKT point")
    }

    #[test]
    fn matches_active_set_enumeration_on_random_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = FitConfig {
            gradient_tolerance: 1e-12,
            max_iterations: 500,
            ..FitConfig::default()
        };
        for trial in 0..25 {
            let dim = 2 + trial % 7; // up to 8
            let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
            let h = &raw * raw.transpose() + DMatrix::identity(dim, dim) * 0.5;
            let c = DVector::from_fn(dim, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let (x_star, v_star) = active_set_oracle(&h, &c);
            let run = minimize_bounded(quadratic(h.clone(), c.clone()), &vec![0.5; dim], &config)
                .unwrap();
            assert!(
                (run.value - v_star).abs() <= 1e-6,
                "trial {trial}: got {}, oracle {}",
                run.value,
                v_star
            );
            for i in 0..dim {
                assert!((run.x[i] - x_star[i]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dim = 6;
        let raw = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        let h = &raw * raw.transpose() + DMatrix::identity(dim, dim);
        let c = DVector::from_fn(dim, |_, _| rng.random::<f64>() - 0.5);
        let run =
            minimize_bounded(quadratic(h, c), &vec![2.0; dim], &FitConfig::default()).unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(run.x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn aborts_on_non_finite_values() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 0.5 {
                Ok((x[0] * x[0], vec![2.0 * x[0]]))
            } else {
                Ok((f64::NAN, vec![f64::NAN]))
            }
        };
        let run = minimize_bounded(f, &[2.0], &FitConfig::default()).unwrap();
        assert_eq!(run.status, ConvergenceStatus::LineSearchFailure);
        assert!(run.value.is_finite());
    }

    fn summary_from(structure: &PriorStructure, y: &[f64], n: &[u64], sigma2: f64) -> TaskSummary {
        TaskSummary::new(
            structure.space().clone(),
            DVector::from_row_slice(y),
            n.to_vec(),
            sigma2,
        )
    }

    #[test]
    fn fit_single_zero_data_returns_zero() {
        let s = structure(&[2, 3]);
        let summary = summary_from(&s, &[0.0; 6], &[3; 6], 1.0);
        let fit = fit_single(&summary, &s, &FitConfig::default()).unwrap();
        assert!(fit.mu_hat[0].abs().max() == 0.0);
    }

    #[test]
    fn fit_single_scalar_matches_grid_search() {
        // k = 1 with a single level: one group, objective depends on
        // q = (tau2_empty + tau2_full) n / sigma2 only
        let s = structure(&[1]);
        let summary = summary_from(&s, &[1.4], &[5], 1.0);
        let fit = fit_single(&summary, &s, &FitConfig::default()).unwrap();

        let mut best = f64::INFINITY;
        for i in 0..40_000 {
            let q = 10f64.powf(-6.0 + 10.0 * i as f64 / 39_999.0);
            let tau2 = [0.0, q];
            let value = st_objective(&summary, &s, &tau2).unwrap().value;
            if value < best {
                best = value;
            }
        }
        // boundary candidate tau2 = 0
        best = best.min(st_objective(&summary, &s, &[0.0, 0.0]).unwrap().value);
        assert!(
            (fit.objective - best).abs() <= 1e-4,
            "fit {} vs grid {best}",
            fit.objective
        );
    }

    #[test]
    fn fit_single_is_deterministic() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let n: Vec<u64> = (0..6).map(|_| rng.random_range(1..9)).collect();
        let summary = summary_from(&s, &y, &n, 0.7);
        let a = fit_single(&summary, &s, &FitConfig::default()).unwrap();
        let b = fit_single(&summary, &s, &FitConfig::default()).unwrap();
        assert_eq!(a.tau2_hat, b.tau2_hat);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.mu_hat[0], b.mu_hat[0]);
    }

    #[test]
    fn fit_single_respects_order_restriction() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0).collect();
        let n: Vec<u64> = (0..6).map(|_| rng.random_range(1..9)).collect();
        let summary = summary_from(&s, &y, &n, 0.7);
        let config = FitConfig {
            max_order: Some(0),
            ..FitConfig::default()
        };
        let fit = fit_single(&summary, &s, &config).unwrap();
        assert_eq!(fit.tau2_hat[1], 0.0);
        assert_eq!(fit.tau2_hat[2], 0.0);
    }

    #[test]
    fn fit_single_beats_naive_on_well_specified_draws() {
        // mu ~ N(0, Lambda(tau2*)), n_g = 5, paired weighted-MSE comparison
        use crate::summary::{weighted_mse, GroundTruth};
        use rand_distr::StandardNormal;
        let s = structure(&[2, 3]);
        let tau2_true = [0.3, 0.15, 0.15, 0.1];
        let lambda = crate::prior::build_covariance(&s, &tau2_true).unwrap();
        let chol = lambda.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = vec![5u64; 6];
        let trials = 500;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let z = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mu = chol.l() * z;
            let y = DVector::from_fn(6, |g, _| {
                mu[g] + (1.0f64 / 5.0).sqrt() * rng.sample::<f64, _>(StandardNormal)
            });
            let summary = summary_from(&s, y.as_slice(), &n, 1.0);
            let truth = GroundTruth::exact(mu);
            let fit = fit_single(&summary, &s, &FitConfig::default()).unwrap();
            let delta = weighted_mse(&fit.mu_hat[0], &truth, &n).unwrap()
                - weighted_mse(&summary.y, &truth, &n).unwrap();
            sum += delta;
            sumsq += delta * delta;
        }
        let mean = sum / trials as f64;
        let var = (sumsq - sum * sum / trials as f64) / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!(mean + 2.326 * se < 0.0, "mean delta {mean}, se {se}");
    }

    #[test]
    fn fit_multi_identical_tasks_give_identical_estimates() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 3.0 + 1.0).collect();
        let n: Vec<u64> = vec![4; 6];
        let base = summary_from(&s, &y, &n, 0.5);
        let summaries = vec![base.clone(), base.clone(), base];
        let fit = fit_multi(&summaries, &s, &FitConfig::default()).unwrap();
        for t in 1..3 {
            let diff = (fit.mu_hat[0].clone() - &fit.mu_hat[t]).abs().max();
            assert!(diff <= 1e-8);
        }
    }

    #[test]
    fn fit_multi_single_task_objective_dominates_endpoints() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let n: Vec<u64> = (0..6).map(|_| rng.random_range(1..7)).collect();
        let summary = summary_from(&s, &y, &n, 0.8);
        let summaries = vec![summary];
        let fit = fit_multi(&summaries, &s, &FitConfig::default()).unwrap();
        // endpoint values of the objective along the initialization
        let e_full = [0.0, 0.0, 0.0, 1.0];
        let ups0 = [0.0; 4];
        let endpoint_single = mt_objective(&summaries, &s, &e_full, &ups0, Variant::MetaMap)
            .unwrap()
            .value;
        let endpoint_init = mt_objective(&summaries, &s, &e_full, &e_full, Variant::MetaMap)
            .unwrap()
            .value;
        assert!(fit.objective <= endpoint_single + 1e-12);
        assert!(fit.objective <= endpoint_init + 1e-12);
    }

    #[test]
    fn fit_multi_suresolve_variant_runs() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let summaries: Vec<TaskSummary> = (0..3)
            .map(|_| {
                let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
                let n: Vec<u64> = (0..6).map(|_| rng.random_range(1..6)).collect();
                summary_from(&s, &y, &n, 0.6)
            })
            .collect();
        let config = FitConfig {
            variant: Variant::SureSolve,
            ..FitConfig::default()
        };
        let fit = fit_multi(&summaries, &s, &config).unwrap();
        assert!(fit.upsilon2_hat.is_none());
        assert_eq!(fit.mu_hat.len(), 3);
        assert!(fit.tau2_hat.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn fit_multi_nonneg_center_clamps() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let summaries: Vec<TaskSummary> = (0..4)
            .map(|_| {
                let y: Vec<f64> = (0..6).map(|_| -2.0 - rng.random::<f64>()).collect();
                let n: Vec<u64> = vec![3; 6];
                summary_from(&s, &y, &n, 0.5)
            })
            .collect();
        let fit = fit_multi(&summaries, &s, &FitConfig::default()).unwrap();
        assert!(fit.theta_hat.iter().all(|&v| v >= 0.0));
        let config = FitConfig {
            nonneg_center: false,
            ..FitConfig::default()
        };
        let raw = fit_multi(&summaries, &s, &config).unwrap();
        assert!(raw.theta_hat.iter().any(|&v| v < 0.0));
    }
}
