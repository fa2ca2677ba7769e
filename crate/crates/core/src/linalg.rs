//! Small dense-solve helpers shared by the estimator modules.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Condition estimate above which a solve is treated as suspect and its
/// residual is verified before the solution is accepted.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;

/// Relative residual bound a suspect solve must meet.
const RESIDUAL_LIMIT: f64 = 1e-8;

/// A partially pivoted LU factorization with a condition guard. The pivot
/// ratio `max |u_ii| / min |u_ii|` serves as the condition estimate; large
/// shrinkage parameters legitimately push it past [`CONDITION_LIMIT`], so a
/// suspect factorization is still used as long as the residual of each
/// solve stays small. Factor once, solve many right-hand sides.
pub(crate) struct CheckedLu {
    lu: LU<f64, Dyn, Dyn>,
    what: &'static str,
    condition: f64,
    /// Retained only when the factorization is suspect, for residual checks.
    matrix: Option<DMatrix<f64>>,
}

impl CheckedLu {
    pub fn new(m: DMatrix<f64>, what: &'static str) -> Result<Self> {
        let lu = m.clone().lu();
        let u = lu.u();
        let mut max_piv = 0.0f64;
        let mut min_piv = f64::INFINITY;
        for i in 0..u.nrows().min(u.ncols()) {
            let p = u[(i, i)].abs();
            max_piv = max_piv.max(p);
            min_piv = min_piv.min(p);
        }
        let condition = if min_piv > 0.0 {
            max_piv / min_piv
        } else {
            f64::INFINITY
        };
        if !condition.is_finite() {
            return Err(Error::IllConditioned { condition });
        }
        let matrix = (condition > CONDITION_LIMIT).then_some(m);
        Ok(Self {
            lu,
            what,
            condition,
            matrix,
        })
    }

    fn verify_mat(&self, rhs: &DMatrix<f64>, sol: &DMatrix<f64>) -> Result<()> {
        let Some(m) = &self.matrix else {
            return Ok(());
        };
        let residual = (m * sol - rhs).abs().max();
        let scale = m.abs().max() * sol.abs().max().max(1.0);
        if residual > RESIDUAL_LIMIT * scale {
            return Err(Error::IllConditioned {
                condition: self.condition,
            });
        }
        Ok(())
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sol = self
            .lu
            .solve(rhs)
            .ok_or(Error::SingularSystem { what: self.what })?;
        self.verify_mat(rhs, &sol)?;
        Ok(sol)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = self
            .lu
            .solve(rhs)
            .ok_or(Error::SingularSystem { what: self.what })?;
        if let Some(m) = &self.matrix {
            let residual = (m * &sol - rhs).abs().max();
            let scale = m.abs().max() * sol.abs().max().max(1.0);
            if residual > RESIDUAL_LIMIT * scale {
                return Err(Error::IllConditioned {
                    condition: self.condition,
                });
            }
        }
        Ok(sol)
    }
}

/// One-shot checked solve of `m * x = rhs`.
pub(crate) fn solve_checked(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    CheckedLu::new(m, "linear solve")?.solve_mat(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_system_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DMatrix::identity(2, 2);
        assert!(solve_checked(m, &rhs).is_err());
    }

    #[test]
    fn large_but_benign_condition_is_accepted() {
        // I + huge rank-one: condition far above the limit, solve still fine
        let d = 4;
        let ones = DMatrix::from_element(d, d, 1.0);
        let m = DMatrix::identity(d, d) + ones * 1e13;
        let sol = solve_checked(m.clone(), &DMatrix::identity(d, d)).unwrap();
        let residual = (&m * sol - DMatrix::identity(d, d)).abs().max();
        assert!(residual <= 1e-8 * m.abs().max());
    }
}
