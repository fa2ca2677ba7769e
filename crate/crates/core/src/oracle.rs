//! Independent weighted-ridge-regression route to the same estimators,
//! used to cross-check the MAP path. The design matrix has one indicator
//! column per (subset, class-combination) pair and a diagonal prior whose
//! entries repeat the subset variances; solving the regression normal
//! equations must reproduce the shrinkage-form estimates exactly.
//!
//! The oracle deliberately takes the expensive explicit route (it builds
//! `K^{-1}`, so it requires strictly positive variance parameters) and runs
//! at test scale only.

use nalgebra::{DMatrix, DVector};

use crate::baselines::EstimatorOutput;
use crate::error::{Error, Result};
use crate::linalg::CheckedLu;
use crate::prior::PriorStructure;
use crate::summary::TaskSummary;

/// The stacked indicator design: columns of every `U_A` in ascending-mask
/// order, with the subset index of each column retained for building the
/// diagonal prior.
#[derive(Debug, Clone)]
pub struct FeatureDesign {
    pub phi: DMatrix<f64>,
    pub column_subset: Vec<usize>,
}

impl FeatureDesign {
    pub fn build(structure: &PriorStructure) -> Self {
        let d = structure.space().group_count();
        let total_cols: usize = (0..structure.subset_count())
            .map(|m| structure.indicator(m).ncols())
            .sum();
        let mut phi = DMatrix::zeros(d, total_cols);
        let mut column_subset = Vec::with_capacity(total_cols);
        let mut offset = 0;
        for mask in 0..structure.subset_count() {
            let u = structure.indicator(mask);
            phi.view_mut((0, offset), (d, u.ncols())).copy_from(u);
            for _ in 0..u.ncols() {
                column_subset.push(mask);
            }
            offset += u.ncols();
        }
        Self { phi, column_subset }
    }

    pub fn column_count(&self) -> usize {
        self.phi.ncols()
    }
}

fn check_interior(params: &[f64], what: &'static str) -> Result<()> {
    if params.iter().any(|&t| t <= 0.0) {
        return Err(Error::SingularSystem { what });
    }
    Ok(())
}

/// Weighted ridge solution `Phi (Phi' Sigma^{-1} Phi + K^{-1})^{-1}
/// Phi' Sigma^{-1} y`; equals the MAP estimate at `theta = 0` for interior
/// `tau2`.
pub fn ridge_single(
    summary: &TaskSummary,
    structure: &PriorStructure,
    tau2: &[f64],
) -> Result<EstimatorOutput> {
    check_interior(tau2, "ridge prior (tau2 must be positive)")?;
    if tau2.len() != structure.subset_count() {
        return Err(Error::DimensionMismatch {
            what: "tau2",
            expected: structure.subset_count(),
            actual: tau2.len(),
        });
    }
    let design = FeatureDesign::build(structure);
    let prec = summary.precision();
    let j = design.column_count();

    // Phi' Sigma^{-1} as a scaled copy of Phi'
    let mut phit_w = design.phi.transpose();
    for g in 0..prec.len() {
        phit_w.column_mut(g).scale_mut(prec[g]);
    }
    let mut normal = &phit_w * &design.phi;
    for col in 0..j {
        normal[(col, col)] += 1.0 / tau2[design.column_subset[col]];
    }
    let rhs = &phit_w * &summary.y;
    let beta = CheckedLu::new(normal, "ridge normal equations")?.solve_vec(&rhs)?;
    Ok(EstimatorOutput::direct(&design.phi * beta, "ridge"))
}

/// Block multi-task ridge: per-task coefficient blocks plus one global
/// block, with prior variances `tau2` (task blocks) and `upsilon2` (global
/// block). Task `t`'s slice of the solution equals the MetaMap-centered
/// estimate at the same parameters.
pub fn ridge_multi(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    upsilon2: &[f64],
) -> Result<Vec<EstimatorOutput>> {
    if summaries.is_empty() {
        return Err(Error::NoTasks);
    }
    check_interior(tau2, "ridge prior (tau2 must be positive)")?;
    check_interior(upsilon2, "ridge prior (upsilon2 must be positive)")?;
    let design = FeatureDesign::build(structure);
    let d = structure.space().group_count();
    let j = design.column_count();
    let t_count = summaries.len();
    let cols = (t_count + 1) * j;

    // stacked design: block row t has Phi in block-column t and in the
    // trailing global block-column
    let mut phi_big = DMatrix::zeros(t_count * d, cols);
    for t in 0..t_count {
        phi_big
            .view_mut((t * d, t * j), (d, j))
            .copy_from(&design.phi);
        phi_big
            .view_mut((t * d, t_count * j), (d, j))
            .copy_from(&design.phi);
    }

    let mut prec_all = DVector::zeros(t_count * d);
    let mut y_all = DVector::zeros(t_count * d);
    for (t, summary) in summaries.iter().enumerate() {
        let prec = summary.precision();
        for g in 0..d {
            prec_all[t * d + g] = prec[g];
            y_all[t * d + g] = summary.y[g];
        }
    }

    let mut phit_w = phi_big.transpose();
    for r in 0..prec_all.len() {
        phit_w.column_mut(r).scale_mut(prec_all[r]);
    }
    let mut normal = &phit_w * &phi_big;
    for col in 0..cols {
        let subset = design.column_subset[col % j];
        let variance = if col < t_count * j {
            tau2[subset]
        } else {
            upsilon2[subset]
        };
        normal[(col, col)] += 1.0 / variance;
    }
    let rhs = &phit_w * &y_all;
    let beta = CheckedLu::new(normal, "multi-task ridge normal equations")?.solve_vec(&rhs)?;
    let fitted = phi_big * beta;
    Ok((0..t_count)
        .map(|t| EstimatorOutput::direct(fitted.rows(t * d, d).into_owned(), "ridge"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{map_estimate, mt_estimate, Variant};
    use crate::prior::{build_covariance, build_structure, DEFAULT_GROUP_LIMIT};
    use crate::space::AttributeSpace;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn structure(dims: &[usize]) -> PriorStructure {
        let space = Arc::new(AttributeSpace::from_level_counts(dims).unwrap());
        build_structure(space, DEFAULT_GROUP_LIMIT).unwrap()
    }

    fn random_summary(
        structure: &PriorStructure,
        rng: &mut ChaCha8Rng,
        allow_empty: bool,
    ) -> TaskSummary {
        let d = structure.space().group_count();
        let mut n: Vec<u64> = (0..d)
            .map(|_| rng.random_range(if allow_empty { 0 } else { 1 }..10))
            .collect();
        if n.iter().all(|&c| c == 0) {
            n[0] = 3;
        }
        let y: Vec<f64> = n
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    rng.random::<f64>() * 4.0 - 2.0
                }
            })
            .collect();
        TaskSummary::new(
            structure.space().clone(),
            DVector::from_row_slice(&y),
            n,
            0.5 + rng.random::<f64>(),
        )
    }

    #[test]
    fn full_set_prior_reduces_to_diagonal_map() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let summary = random_summary(&s, &mut rng, false);
        // near-zero variance on everything except the full set behaves like
        // the pure identity prior
        let tau2 = [1e-14, 1e-14, 1e-14, 1.0];
        let out = ridge_single(&summary, &s, &tau2).unwrap();
        let prec = summary.precision();
        for g in 0..6 {
            let expected = summary.y[g] * prec[g] / (1.0 + prec[g]);
            assert!((out.mu_hat[g] - expected).abs() <= 1e-6);
        }
    }

    #[test]
    fn ridge_single_equals_map_on_interior_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut checked = 0;
        for dims in [vec![2usize], vec![5], vec![2, 3], vec![3, 4], vec![2, 2]] {
            let s = structure(&dims);
            let m = s.subset_count();
            for _ in 0..10 {
                let summary = random_summary(&s, &mut rng, true);
                let tau2: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 + 0.05).collect();
                let ridge = ridge_single(&summary, &s, &tau2).unwrap();
                let lambda = build_covariance(&s, &tau2).unwrap();
                let d = summary.group_count();
                let map = map_estimate(&summary, &DVector::zeros(d), &lambda).unwrap();
                let tol = 1e-8 * (1.0 + summary.y.abs().max());
                assert!(
                    (ridge.mu_hat - map.mu_hat).abs().max() <= tol,
                    "dims {dims:?}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 50);
    }

    #[test]
    fn ridge_multi_equals_metamap_on_interior_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let s = structure(&[2, 3]);
        let mut checked = 0;
        for trial in 0..20 {
            let t_count = 2 + trial % 3; // up to 4
            let summaries: Vec<TaskSummary> = (0..t_count)
                .map(|_| random_summary(&s, &mut rng, false))
                .collect();
            let tau2: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
            let ups: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
            let ridge = ridge_multi(&summaries, &s, &tau2, &ups).unwrap();
            let map = mt_estimate(&summaries, &s, &tau2, &ups, Variant::MetaMap, false).unwrap();
            for (r, m) in ridge.iter().zip(&map) {
                let tol = 1e-8 * (1.0 + m.mu_hat.abs().max());
                assert!((r.mu_hat.clone() - &m.mu_hat).abs().max() <= tol);
            }
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn ridge_multi_single_task_with_loose_hyperprior_tracks_mt_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let s = structure(&[2, 3]);
        let summary = random_summary(&s, &mut rng, false);
        let summaries = vec![summary];
        let tau2 = [0.4, 0.3, 0.2, 0.8];
        let ups = [1e6, 1e6, 1e6, 1e6];
        let ridge = ridge_multi(&summaries, &s, &tau2, &ups).unwrap();
        let map = mt_estimate(&summaries, &s, &tau2, &ups, Variant::MetaMap, false).unwrap();
        assert!((ridge[0].mu_hat.clone() - &map[0].mu_hat).abs().max() <= 1e-6);
    }

    #[test]
    fn ridge_multi_identical_tasks_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let s = structure(&[2, 3]);
        let base = random_summary(&s, &mut rng, false);
        let summaries = vec![base.clone(), base.clone(), base];
        let tau2 = [0.4, 0.3, 0.2, 0.8];
        let ups = [0.5, 0.25, 0.25, 0.4];
        let ridge = ridge_multi(&summaries, &s, &tau2, &ups).unwrap();
        for t in 1..3 {
            assert!((ridge[0].mu_hat.clone() - &ridge[t].mu_hat).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn ridge_multi_identical_tasks_reduce_to_a_single_ridge() {
        // T identical tasks solve the same problem as one task with
        // precision scaled by T and per-coefficient prior tau2/T + ups2:
        // the task blocks collapse by symmetry and their quadratic form
        // convolves with the global block.
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let s = structure(&[2, 3]);
        let t_count = 3u64;
        let base = random_summary(&s, &mut rng, false);
        let summaries = vec![base.clone(), base.clone(), base.clone()];
        let tau2 = [0.4, 0.3, 0.2, 0.8];
        let ups = [0.5, 0.25, 0.25, 0.4];
        let ridge = ridge_multi(&summaries, &s, &tau2, &ups).unwrap();

        let mut merged = base.clone();
        merged.n = base.n.iter().map(|&c| c * t_count).collect();
        let eff: Vec<f64> = tau2
            .iter()
            .zip(&ups)
            .map(|(&t, &u)| t / t_count as f64 + u)
            .collect();
        let single = ridge_single(&merged, &s, &eff).unwrap();
        for slice in &ridge {
            let gap = (slice.mu_hat.clone() - &single.mu_hat).abs().max();
            assert!(gap <= 1e-9, "reduction gap {gap}");
        }
    }

    #[test]
    fn interior_requirement_is_enforced() {
        let s = structure(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let summary = random_summary(&s, &mut rng, false);
        assert!(ridge_single(&summary, &s, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_smw_identity_holds_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let n = 5;
            let m = 3;
            let raw_a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let a = &raw_a * raw_a.transpose() + DMatrix::identity(n, n) * 0.3;
            let raw_r = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
            let r = &raw_r * raw_r.transpose() + DMatrix::identity(m, m) * 0.3;
            let x = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() - 0.5);

            let lhs = (&a + &x * &r * x.transpose()).try_inverse().unwrap();
            let a_inv = a.try_inverse().unwrap();
            let inner = (r.try_inverse().unwrap() + x.transpose() * &a_inv * &x)
                .try_inverse()
                .unwrap();
            let rhs = &a_inv - &a_inv * &x * inner * x.transpose() * &a_inv;
            assert!((lhs - rhs).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn paired_inverse_identity_holds_numerically() {
        // (A^{-1} + B^{-1})^{-1} A^{-1} = B (A + B)^{-1}
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        for _ in 0..10 {
            let n = 6;
            let raw_a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let a = &raw_a * raw_a.transpose() + DMatrix::identity(n, n) * 0.4;
            let raw_b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let b = &raw_b * raw_b.transpose() + DMatrix::identity(n, n) * 0.4;
            let a_inv = a.clone().try_inverse().unwrap();
            let b_inv = b.clone().try_inverse().unwrap();
            let lhs = (&a_inv + b_inv).try_inverse().unwrap() * a_inv;
            let rhs = &b * (&a + &b).try_inverse().unwrap();
            assert!((lhs - rhs).abs().max() <= 1e-10);
        }
    }
}
