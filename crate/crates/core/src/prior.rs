//! The additive intersectional-effects prior: subset-agreement indicator
//! matrices, the covariance they span, and the shrinkage matrix
//! `A = (I + Lambda Sigma^{-1})^{-1}`.
//!
//! Subsets of attributes are encoded as bitmasks (bit `a` set means
//! attribute `a` participates), and every parameter vector over subsets is
//! laid out in ascending-bitmask order. Nothing in this module inverts the
//! prior covariance or the observation covariance, so zero variance
//! parameters and empty groups are handled without special cases.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_checked;
use crate::space::AttributeSpace;

/// Default cap on the group count for dense structure construction.
pub const DEFAULT_GROUP_LIMIT: usize = 4096;

/// Human-readable label of a subset bitmask, e.g. `{}`, `{sex}`, `{sex,age}`.
pub fn subset_label(space: &AttributeSpace, mask: usize) -> String {
    let names: Vec<&str> = space
        .attributes()
        .iter()
        .enumerate()
        .filter(|(a, _)| mask >> a & 1 == 1)
        .map(|(_, attr)| attr.name.as_str())
        .collect();
    format!("{{{}}}", names.join(","))
}

/// Labels of all `2^k` subsets in ascending-bitmask order.
pub fn subset_labels(space: &AttributeSpace) -> Vec<String> {
    (0..1usize << space.attribute_count())
        .map(|mask| subset_label(space, mask))
        .collect()
}

/// Indicator matrices `U_A` and their Grams `C_A = U_A U_A^T` for every
/// subset `A` of attributes, in ascending-bitmask order.
#[derive(Debug, Clone)]
pub struct PriorStructure {
    space: Arc<AttributeSpace>,
    /// `U_A`: `d x prod_{a in A} d_a`, entry `(g, c)` is 1 iff group `g`
    /// restricted to the attributes of `A` equals class combination `c`.
    indicators: Vec<DMatrix<f64>>,
    /// `C_A = U_A U_A^T`: entry `(g, h)` is 1 iff groups agree on all
    /// attributes in `A`.
    grams: Vec<DMatrix<f64>>,
}

impl PriorStructure {
    pub fn space(&self) -> &Arc<AttributeSpace> {
        &self.space
    }

    pub fn subset_count(&self) -> usize {
        self.grams.len()
    }

    pub fn indicator(&self, mask: usize) -> &DMatrix<f64> {
        &self.indicators[mask]
    }

    pub fn gram(&self, mask: usize) -> &DMatrix<f64> {
        &self.grams[mask]
    }

    pub fn grams(&self) -> &[DMatrix<f64>] {
        &self.grams
    }
}

/// Column index of group `g` (0-based offset) in `U_A`: the row-major rank of
/// the class combination of `g` restricted to the attributes in `mask`.
fn combo_index(classes: &[usize], dims: &[usize], mask: usize) -> usize {
    let mut idx = 0usize;
    for (a, (&c, &da)) in classes.iter().zip(dims).enumerate() {
        if mask >> a & 1 == 1 {
            idx = idx * da + (c - 1);
        }
    }
    idx
}

/// Row-major rank of group `group` (0-based offset) restricted to the
/// attributes in `mask`; the number of distinct ranks is
/// `prod_{a in mask} d_a`.
pub fn subset_class_index(space: &AttributeSpace, group: usize, mask: usize) -> usize {
    let classes = space
        .group_classes(group + 1)
        .expect("group offset in range");
    combo_index(&classes, space.level_counts(), mask)
}

/// Build all `2^k` indicator and Gram matrices for `space`.
pub fn build_structure(space: Arc<AttributeSpace>, limit: usize) -> Result<PriorStructure> {
    let d = space.group_count();
    if d > limit {
        return Err(Error::SpaceTooLarge { d, limit });
    }
    let k = space.attribute_count();
    let dims = space.level_counts().to_vec();
    let class_tuples: Vec<Vec<usize>> = (1..=d)
        .map(|g| space.group_classes(g).expect("g in range"))
        .collect();

    let mut indicators = Vec::with_capacity(1 << k);
    let mut grams = Vec::with_capacity(1 << k);
    for mask in 0..1usize << k {
        let cols: usize = dims
            .iter()
            .enumerate()
            .filter(|(a, _)| mask >> a & 1 == 1)
            .map(|(_, &da)| da)
            .product();
        let combos: Vec<usize> = class_tuples
            .iter()
            .map(|classes| combo_index(classes, &dims, mask))
            .collect();
        let mut u = DMatrix::zeros(d, cols);
        for (g, &c) in combos.iter().enumerate() {
            u[(g, c)] = 1.0;
        }
        let mut c_mat = DMatrix::zeros(d, d);
        for g in 0..d {
            for h in 0..d {
                if combos[g] == combos[h] {
                    c_mat[(g, h)] = 1.0;
                }
            }
        }
        indicators.push(u);
        grams.push(c_mat);
    }
    Ok(PriorStructure {
        space,
        indicators,
        grams,
    })
}

/// Prior covariance `Lambda(tau2) = sum_A tau2_A C_A`.
pub fn build_covariance(structure: &PriorStructure, tau2: &[f64]) -> Result<DMatrix<f64>> {
    if tau2.len() != structure.subset_count() {
        return Err(Error::DimensionMismatch {
            what: "tau2",
            expected: structure.subset_count(),
            actual: tau2.len(),
        });
    }
    let d = structure.space.group_count();
    let mut lambda = DMatrix::zeros(d, d);
    for (c_mat, &t) in structure.grams.iter().zip(tau2) {
        if t != 0.0 {
            lambda += c_mat * t;
        }
    }
    Ok(lambda)
}

/// Shrinkage matrix `A = (I + Lambda(tau2) Sigma^{-1})^{-1}` computed from
/// the prior structure without ever assembling an ill-scaled dense system:
/// with `V` the horizontal stack of `sqrt(tau2_A) U_A` over active subsets,
/// `A = I - V (I + V^T D V)^{-1} V^T D`. The inner matrix has eigenvalues
/// at least one, so the solve is stable across the whole parameter range,
/// including the near-degenerate limits where a direct factorization of
/// `I + Lambda D` loses the small-scale structure to cancellation.
pub fn shrinkage_from_params(
    structure: &PriorStructure,
    tau2: &[f64],
    precision: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if tau2.len() != structure.subset_count() {
        return Err(Error::DimensionMismatch {
            what: "tau2",
            expected: structure.subset_count(),
            actual: tau2.len(),
        });
    }
    let d = structure.space.group_count();
    debug_assert_eq!(precision.len(), d);
    let total_cols: usize = tau2
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t > 0.0)
        .map(|(mask, _)| structure.indicators[mask].ncols())
        .sum();
    if total_cols == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut v = DMatrix::zeros(d, total_cols);
    let mut offset = 0;
    for (mask, &t) in tau2.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let u = &structure.indicators[mask];
        let scale = t.sqrt();
        for c in 0..u.ncols() {
            for g in 0..d {
                v[(g, offset + c)] = scale * u[(g, c)];
            }
        }
        offset += u.ncols();
    }
    // V^T D and the inner SPD system I + V^T D V
    let mut vtd = v.transpose();
    for g in 0..d {
        vtd.column_mut(g).scale_mut(precision[g]);
    }
    let mut inner = &vtd * &v;
    for j in 0..total_cols {
        inner[(j, j)] += 1.0;
    }
    let chol = inner.cholesky().ok_or(Error::SingularSystem {
        what: "shrinkage inner system",
    })?;
    let x = chol.solve(&vtd);
    Ok(DMatrix::identity(d, d) - v * x)
}

/// Shrinkage matrix `A = (I + Lambda Sigma^{-1})^{-1}` for an arbitrary
/// covariance, computed as a linear solve against the identity; valid for
/// singular `Lambda` and for empty groups (zero precision entries). Prefer
/// [`shrinkage_from_params`] when the covariance comes from a
/// [`PriorStructure`]; this direct route loses accuracy when `Lambda`
/// carries wildly mixed scales.
pub fn shrinkage_matrix(lambda: &DMatrix<f64>, precision: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = lambda.nrows();
    debug_assert_eq!(precision.len(), d);
    // I + Lambda * diag(precision): column g of Lambda scaled by precision_g.
    let mut m = DMatrix::zeros(d, d);
    for g in 0..d {
        let w = precision[g];
        if w != 0.0 {
            for r in 0..d {
                m[(r, g)] = lambda[(r, g)] * w;
            }
        }
        m[(g, g)] += 1.0;
    }
    solve_checked(m, &DMatrix::identity(d, d))
}

/// Zero out interaction orders above `max_order`, keeping the highest-order
/// (full-set) entry: entries with `|A|` in `{max_order+1, ..., k-1}` are set
/// to zero. `max_order = -1` leaves only the full-set entry free;
/// `max_order = k` is the identity.
pub fn restrict_order(tau2: &[f64], k: usize, max_order: i32) -> Vec<f64> {
    tau2.iter()
        .enumerate()
        .map(|(mask, &t)| {
            if order_is_active(mask, k, max_order) {
                t
            } else {
                0.0
            }
        })
        .collect()
}

/// Whether the subset `mask` survives an order restriction at `max_order`.
pub fn order_is_active(mask: usize, k: usize, max_order: i32) -> bool {
    let size = mask.count_ones() as i32;
    size as usize == k || size <= max_order
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn structure(dims: &[usize]) -> PriorStructure {
        let space = Arc::new(AttributeSpace::from_level_counts(dims).unwrap());
        build_structure(space, DEFAULT_GROUP_LIMIT).unwrap()
    }

    #[test]
    fn structure_2x3_matches_figure() {
        let s = structure(&[2, 3]);
        let d = 6;
        // C_{} = ones, C_{1,2} = identity
        assert_eq!(s.gram(0), &DMatrix::from_element(d, d, 1.0));
        assert_eq!(s.gram(3), &DMatrix::identity(d, d));
        // C_{attr1}: block-diagonal of two 3x3 ones blocks
        for g in 0..d {
            for h in 0..d {
                let expected = if g / 3 == h / 3 { 1.0 } else { 0.0 };
                assert_eq!(s.gram(1)[(g, h)], expected, "C_attr1 at ({g},{h})");
                let expected_age = if g % 3 == h % 3 { 1.0 } else { 0.0 };
                assert_eq!(s.gram(2)[(g, h)], expected_age, "C_attr2 at ({g},{h})");
            }
        }
    }

    #[test]
    fn structure_single_attribute() {
        let s = structure(&[3]);
        assert_eq!(s.subset_count(), 2);
        assert_eq!(s.gram(0), &DMatrix::from_element(3, 3, 1.0));
        assert_eq!(s.gram(1), &DMatrix::identity(3, 3));
    }

    #[test]
    fn structure_matches_entrywise_definition() {
        // k = 3, dims (2, 2, 2): check every C_A against 1{g_A = h_A}.
        let dims = [2usize, 2, 2];
        let s = structure(&dims);
        let space = s.space().clone();
        for mask in 0..8usize {
            for g in 1..=8usize {
                for h in 1..=8usize {
                    let cg = space.group_classes(g).unwrap();
                    let ch = space.group_classes(h).unwrap();
                    let agree = (0..3).all(|a| mask >> a & 1 == 0 || cg[a] == ch[a]);
                    assert_eq!(
                        s.gram(mask)[(g - 1, h - 1)],
                        if agree { 1.0 } else { 0.0 },
                        "mask {mask} at ({g},{h})"
                    );
                }
            }
        }
    }

    #[test]
    fn indicator_columns_partition_groups() {
        let s = structure(&[2, 3]);
        for mask in 0..4 {
            let u = s.indicator(mask);
            // each row has exactly one 1
            for g in 0..6 {
                let row_sum: f64 = (0..u.ncols()).map(|c| u[(g, c)]).sum();
                assert_eq!(row_sum, 1.0);
            }
            // orthogonal columns
            let gram = u.transpose() * u;
            for i in 0..gram.nrows() {
                for j in 0..gram.ncols() {
                    if i != j {
                        assert_eq!(gram[(i, j)], 0.0);
                    }
                }
            }
            assert_eq!(s.gram(mask), &(u * u.transpose()));
        }
    }

    #[test]
    fn gram_diagonal_sums_to_2k() {
        let s = structure(&[2, 3, 2]);
        let d = s.space().group_count();
        for g in 0..d {
            let total: f64 = (0..s.subset_count()).map(|m| s.gram(m)[(g, g)]).sum();
            assert_eq!(total, 8.0);
        }
    }

    #[test]
    fn covariance_k1_example() {
        let s = structure(&[3]);
        let lambda = build_covariance(&s, &[1.0, 2.0]).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 3.0]);
        assert_eq!(lambda, expected);
    }

    #[test]
    fn covariance_full_set_only_is_identity() {
        let s = structure(&[2, 3]);
        let mut tau2 = vec![0.0; 4];
        tau2[3] = 1.0;
        assert_eq!(
            build_covariance(&s, &tau2).unwrap(),
            DMatrix::identity(6, 6)
        );
    }

    #[test]
    fn covariance_matches_u_product_oracle() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let tau2: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0).collect();
            let lambda = build_covariance(&s, &tau2).unwrap();
            let mut oracle = DMatrix::zeros(6, 6);
            for (mask, &t) in tau2.iter().enumerate() {
                let u = s.indicator(mask);
                oracle += t * u * u.transpose();
            }
            assert!((lambda - &oracle).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn covariance_is_psd() {
        let s = structure(&[2, 2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let tau2: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 3.0).collect();
            let lambda = build_covariance(&s, &tau2).unwrap();
            assert!((&lambda - lambda.transpose()).abs().max() == 0.0);
            let norm = lambda.norm();
            let eig = lambda.symmetric_eigenvalues();
            let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10 * norm, "min eig {min_eig}, norm {norm}");
        }
    }

    #[test]
    fn shrinkage_identity_case() {
        let a = shrinkage_matrix(&DMatrix::identity(4, 4), &DVector::from_element(4, 1.0)).unwrap();
        assert!((a - DMatrix::identity(4, 4) * 0.5).abs().max() <= 1e-14);
    }

    #[test]
    fn shrinkage_all_groups_empty_gives_identity() {
        let s = structure(&[2, 3]);
        let lambda = build_covariance(&s, &[0.4, 0.3, 0.2, 0.1]).unwrap();
        let a = shrinkage_matrix(&lambda, &DVector::zeros(6)).unwrap();
        assert!((a - DMatrix::identity(6, 6)).abs().max() <= 1e-14);
    }

    #[test]
    fn shrinkage_full_set_prior_is_diagonal() {
        let s = structure(&[2, 3]);
        let tau_full = 1.7;
        let mut tau2 = vec![0.0; 4];
        tau2[3] = tau_full;
        let lambda = build_covariance(&s, &tau2).unwrap();
        let sigma2 = 0.8;
        let n = [3.0, 1.0, 0.0, 5.0, 2.0, 4.0];
        let prec = DVector::from_fn(6, |g, _| n[g] / sigma2);
        let a = shrinkage_matrix(&lambda, &prec).unwrap();
        for g in 0..6 {
            for h in 0..6 {
                let expected = if g == h {
                    1.0 / (1.0 + tau_full * n[g] / sigma2)
                } else {
                    0.0
                };
                assert!((a[(g, h)] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shrinkage_symmetry_identity_and_joint_inverse() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let tau2: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0).collect();
            let lambda = build_covariance(&s, &tau2).unwrap();
            let prec = DVector::from_fn(6, |_, _| rng.random_range(1..20) as f64 / 0.7);
            let a = shrinkage_matrix(&lambda, &prec).unwrap();
            let sig_inv = DMatrix::from_diagonal(&prec);
            // Sigma^{-1} A = A^T Sigma^{-1}
            let left = &sig_inv * &a;
            let right = a.transpose() * &sig_inv;
            let prec_max = prec.amax();
            assert!((left.clone() - &right).abs().max() <= 1e-10 * prec_max);
            // (Lambda + Sigma)^{-1} = Sigma^{-1} A for invertible Sigma
            let sigma = DMatrix::from_diagonal(&prec.map(|p| 1.0 / p));
            let joint = (&lambda + sigma)
                .try_inverse()
                .expect("well conditioned in tests");
            assert!((joint.clone() - &left).abs().max() <= 1e-8 * joint.abs().max());
        }
    }

    #[test]
    fn structured_route_matches_direct_solve_at_moderate_parameters() {
        let s = structure(&[2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..25 {
            let tau2: Vec<f64> = (0..4)
                .map(|_| {
                    if rng.random::<f64>() < 0.25 {
                        0.0
                    } else {
                        rng.random::<f64>() * 2.0
                    }
                })
                .collect();
            let prec = DVector::from_fn(6, |_, _| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random_range(1..15) as f64 / 0.8
                }
            });
            let a_struct = shrinkage_from_params(&s, &tau2, &prec).unwrap();
            let lambda = build_covariance(&s, &tau2).unwrap();
            let a_direct = shrinkage_matrix(&lambda, &prec).unwrap();
            assert!((a_struct.clone() - a_direct).abs().max() <= 1e-12);
            // Sigma^{-1} A = A^T Sigma^{-1}
            let sig_inv = DMatrix::from_diagonal(&prec);
            let gap = (&sig_inv * &a_struct - a_struct.transpose() * &sig_inv)
                .abs()
                .max();
            assert!(gap <= 1e-10 * prec.amax().max(1.0));
        }
    }

    #[test]
    fn restrict_order_k2() {
        let tau2 = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(restrict_order(&tau2, 2, 0), vec![1.0, 0.0, 0.0, 4.0]);
        assert_eq!(restrict_order(&tau2, 2, 2), tau2.to_vec());
        assert_eq!(restrict_order(&tau2, 2, -1), vec![0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn restrict_order_k3_zeroes_pairs_only() {
        let tau2: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let out = restrict_order(&tau2, 3, 1);
        let mut zeroed = 0;
        for (mask, (&orig, &kept)) in tau2.iter().zip(&out).enumerate() {
            if mask.count_ones() == 2 {
                assert_eq!(kept, 0.0);
                zeroed += 1;
            } else {
                assert_eq!(kept, orig);
            }
        }
        assert_eq!(zeroed, 3);
    }

    #[test]
    fn structure_respects_size_limit() {
        let space = Arc::new(AttributeSpace::from_level_counts(&[100, 100]).unwrap());
        assert!(matches!(
            build_structure(space, DEFAULT_GROUP_LIMIT).unwrap_err(),
            Error::SpaceTooLarge { .. }
        ));
    }

    #[test]
    fn labels_in_ascending_mask_order() {
        let space = AttributeSpace::new(vec![
            crate::space::Attribute::new("sex", vec!["F".into(), "M".into()]),
            crate::space::Attribute::new("age", vec!["a".into(), "b".into(), "c".into()]),
        ])
        .unwrap();
        assert_eq!(
            subset_labels(&space),
            vec!["{}", "{sex}", "{age}", "{sex,age}"]
        );
    }
}
