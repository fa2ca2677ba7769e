//! MAP estimation, SURE values, and the tuned objectives with their
//! analytic gradients, for one task and for many.
//!
//! Throughout, `A_t = (I + Lambda Sigma_t^{-1})^{-1}` is the shrinkage
//! matrix, `S_t = Sigma_t^{-1} A_t` (symmetric), and
//! `P_t = A_t^T Sigma_t^{-1} A_t = S_t A_t`. Derivatives with respect to a
//! variance parameter use `d A_t = -A_t C_i S_t` where `C_i` is the
//! subset-agreement indicator of parameter `i`; everything else follows by
//! the product rule. All expressions stay in precision form so empty groups
//! and zero variance parameters need no special-casing.

use nalgebra::{DMatrix, DVector};

use crate::baselines::EstimatorOutput;
use crate::error::{Error, Result};
use crate::linalg::CheckedLu;
use crate::prior::{build_covariance, shrinkage_from_params, shrinkage_matrix, PriorStructure};
use crate::summary::TaskSummary;

/// Which multi-task center estimator drives the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Treat the center as its own MAP problem under a structured
    /// hyperprior; tunes both `tau2` and `upsilon2`.
    #[default]
    MetaMap,
    /// Set the center by minimizing the aggregated SURE directly, a
    /// weighted least-squares solve; tunes `tau2` only.
    SureSolve,
}

/// Estimated prior mean together with the per-task mixing matrices
/// `M_t` satisfying `theta = sum_t M_t y_t` (before any nonnegativity
/// correction).
#[derive(Debug, Clone)]
pub struct MapCenter {
    pub theta: DVector<f64>,
    pub mixers: Vec<DMatrix<f64>>,
}

/// Objective value and gradient over the active parameters (`tau2` alone,
/// or `tau2` followed by `upsilon2`).
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Posterior mode under the prior `N(theta, Lambda)`: `y - A (y - theta)`,
/// valid for singular `Lambda` and empty groups.
pub fn map_estimate(
    summary: &TaskSummary,
    theta: &DVector<f64>,
    lambda: &DMatrix<f64>,
) -> Result<EstimatorOutput> {
    let d = summary.group_count();
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: d,
            actual: theta.len(),
        });
    }
    let a = shrinkage_matrix(lambda, &summary.precision())?;
    // theta + (I - A)(y - theta): algebraically y - A(y - theta), but exact
    // at Lambda = 0 where A is the identity
    let retained = DMatrix::identity(d, d) - &a;
    let mu = theta + retained * (&summary.y - theta);
    Ok(EstimatorOutput::direct(mu, "map"))
}

/// [`map_estimate`] with the prior given by its structure parameters; the
/// shrinkage matrix is built through the stable low-rank route, so extreme
/// variance values (the expressivity limits) keep full accuracy.
pub fn map_estimate_params(
    summary: &TaskSummary,
    theta: &DVector<f64>,
    structure: &PriorStructure,
    tau2: &[f64],
) -> Result<EstimatorOutput> {
    let d = summary.group_count();
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: d,
            actual: theta.len(),
        });
    }
    let a = shrinkage_from_params(structure, tau2, &summary.precision())?;
    let retained = DMatrix::identity(d, d) - &a;
    let mu = theta + retained * (&summary.y - theta);
    Ok(EstimatorOutput::direct(mu, "map"))
}

/// Unbiased risk estimate of `mu_hat` for the count-weighted MSE:
/// `(sigma2 / d) (||mu_hat - y||^2_{Sigma^{-1}} - d + 2 div)` where `div`
/// is the analytic divergence of the estimator at `y`.
pub fn sure_value(summary: &TaskSummary, mu_hat: &DVector<f64>, divergence: f64) -> f64 {
    let d = summary.group_count();
    let prec = summary.precision();
    let mut quad = 0.0;
    for g in 0..d {
        let r = mu_hat[g] - summary.y[g];
        quad += prec[g] * r * r;
    }
    summary.sigma2 / d as f64 * (quad - d as f64 + 2.0 * divergence)
}

/// Generalized unbiased risk estimate for a possibly non-diagonal
/// observation covariance and an arbitrary PSD weight:
/// `||mu_hat - y||^2_W + Tr(W Sigma) + 2 sum_ij (Sigma .* (W J - W))_ij`
/// with `J` the Jacobian of the estimator at `y`.
pub fn sure_value_general(
    y: &DVector<f64>,
    sigma: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    jacobian: &DMatrix<f64>,
) -> Result<f64> {
    let d = y.len();
    for (what, rows, cols) in [
        ("sigma", sigma.nrows(), sigma.ncols()),
        ("weight", weight.nrows(), weight.ncols()),
        ("jacobian", jacobian.nrows(), jacobian.ncols()),
    ] {
        if rows != d || cols != d {
            return Err(Error::DimensionMismatch {
                what,
                expected: d,
                actual: rows.max(cols),
            });
        }
    }
    if mu_hat.len() != d {
        return Err(Error::DimensionMismatch {
            what: "mu_hat",
            expected: d,
            actual: mu_hat.len(),
        });
    }
    let r = mu_hat - y;
    let quad = r.dot(&(weight * &r));
    let trace = (weight * sigma).trace();
    let wj = weight * (jacobian - DMatrix::identity(d, d));
    let cross: f64 = sigma.zip_map(&wj, |s, w| s * w).sum();
    Ok(quad + trace + 2.0 * cross)
}

/// Per-task shrinkage matrices and derived products shared by the
/// objectives and their gradients.
struct TaskMatrices {
    /// `A_t`
    a: Vec<DMatrix<f64>>,
    /// `S_t = Sigma_t^{-1} A_t`
    s: Vec<DMatrix<f64>>,
    /// `P_t = S_t A_t`
    p: Vec<DMatrix<f64>>,
}

impl TaskMatrices {
    fn build(summaries: &[TaskSummary], structure: &PriorStructure, tau2: &[f64]) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::NoTasks);
        }
        let mut a = Vec::with_capacity(summaries.len());
        let mut s = Vec::with_capacity(summaries.len());
        let mut p = Vec::with_capacity(summaries.len());
        for summary in summaries {
            let prec = summary.precision();
            let a_t = shrinkage_from_params(structure, tau2, &prec)?;
            let mut s_t = a_t.clone();
            for g in 0..prec.len() {
                let w = prec[g];
                s_t.row_mut(g).scale_mut(w);
            }
            let p_t = &s_t * &a_t;
            a.push(a_t);
            s.push(s_t);
            p.push(p_t);
        }
        Ok(Self { a, s, p })
    }
}

/// Single-task SURE objective at `theta = 0`, up to additive constants:
/// `||A y||^2_{Sigma^{-1}} - 2 Tr(A)`, with its gradient over `tau2`.
pub fn st_objective(
    summary: &TaskSummary,
    structure: &PriorStructure,
    tau2: &[f64],
) -> Result<ObjectiveEval> {
    let tm = TaskMatrices::build(std::slice::from_ref(summary), structure, tau2)?;
    let a = &tm.a[0];
    let s = &tm.s[0];
    let y = &summary.y;
    let sy = s * y; // Sigma^{-1} A y
    let py = &tm.p[0] * y; // A^T Sigma^{-1} A y
    let value = y.dot(&py) - 2.0 * a.trace();
    // trace factor: tr(A C_i S) = sum_{g,h} C_i[g,h] (S A)[h,g]; S A = P is
    // symmetric, so the elementwise product against C_i suffices.
    let p = &tm.p[0];
    let m = structure.subset_count();
    let mut gradient = DVector::zeros(m);
    for i in 0..m {
        let c = structure.gram(i);
        let quad = py.dot(&(c * &sy));
        let trace = c.zip_map(p, |ci, pi| ci * pi).sum();
        gradient[i] = -2.0 * quad + 2.0 * trace;
    }
    Ok(ObjectiveEval { value, gradient })
}

fn clamp_nonnegative(theta: &mut DVector<f64>) {
    for v in theta.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// MetaMap machinery shared between the center estimator, the objective,
/// and the gradient: everything is expressed through
/// `Q = (I + Gamma SigmaLambda^{-1})^{-1}` so neither `Gamma` nor any
/// `Sigma_t` is ever inverted.
struct MetaMapParts {
    tm: TaskMatrices,
    /// `SigmaLambda^{-1} = sum_t S_t`
    sigma_lambda_inv: DMatrix<f64>,
    q: DMatrix<f64>,
    mixers: Vec<DMatrix<f64>>,
    /// `sum_t S_t y_t`
    weighted_sum: DVector<f64>,
    theta: DVector<f64>,
}

impl MetaMapParts {
    fn build(
        summaries: &[TaskSummary],
        structure: &PriorStructure,
        tau2: &[f64],
        upsilon2: &[f64],
    ) -> Result<Self> {
        let tm = TaskMatrices::build(summaries, structure, tau2)?;
        let d = summaries[0].group_count();
        let gamma = build_covariance(structure, upsilon2)?;
        let mut sigma_lambda_inv = DMatrix::zeros(d, d);
        for s_t in &tm.s {
            sigma_lambda_inv += s_t;
        }
        let meta = DMatrix::identity(d, d) + &gamma * &sigma_lambda_inv;
        let q = CheckedLu::new(meta, "meta-prior system")?.solve_mat(&DMatrix::identity(d, d))?;
        let w = &q * &gamma;
        let mixers: Vec<DMatrix<f64>> = tm.s.iter().map(|s_t| &w * s_t).collect();
        let mut weighted_sum = DVector::zeros(d);
        for (s_t, summary) in tm.s.iter().zip(summaries) {
            weighted_sum += s_t * &summary.y;
        }
        let theta = &w * &weighted_sum;
        Ok(Self {
            tm,
            sigma_lambda_inv,
            q,
            mixers,
            theta,
            weighted_sum,
        })
    }
}

/// MetaMap center: MAP estimate of the shared mean under the hyperprior
/// `N(0, Gamma(upsilon2))`, with an optional coordinatewise nonnegativity
/// correction applied to the returned center.
pub fn theta_metamap(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    upsilon2: &[f64],
    nonneg: bool,
) -> Result<MapCenter> {
    let parts = MetaMapParts::build(summaries, structure, tau2, upsilon2)?;
    let mut theta = parts.theta;
    if nonneg {
        clamp_nonnegative(&mut theta);
    }
    Ok(MapCenter {
        theta,
        mixers: parts.mixers,
    })
}

/// SureSolve machinery: normal matrix `N = sum_t P_t` factored once.
struct SureSolveParts {
    tm: TaskMatrices,
    normal: CheckedLu,
    mixers: Vec<DMatrix<f64>>,
    theta: DVector<f64>,
}

impl SureSolveParts {
    fn build(summaries: &[TaskSummary], structure: &PriorStructure, tau2: &[f64]) -> Result<Self> {
        let tm = TaskMatrices::build(summaries, structure, tau2)?;
        let d = summaries[0].group_count();
        let mut n_mat = DMatrix::zeros(d, d);
        for p_t in &tm.p {
            n_mat += p_t;
        }
        let normal = CheckedLu::new(n_mat, "center normal equations")?;
        let mixers: Result<Vec<DMatrix<f64>>> =
            tm.p.iter().map(|p_t| normal.solve_mat(p_t)).collect();
        let mixers = mixers?;
        let mut rhs = DVector::zeros(d);
        for (p_t, summary) in tm.p.iter().zip(summaries) {
            rhs += p_t * &summary.y;
        }
        let theta = normal.solve_vec(&rhs)?;
        Ok(Self {
            tm,
            normal,
            mixers,
            theta,
        })
    }
}

/// SureSolve center: the minimizer of the aggregated SURE over `theta`,
/// i.e. the solution of `sum_t P_t theta = sum_t P_t y_t`.
pub fn theta_suresolve(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    nonneg: bool,
) -> Result<MapCenter> {
    let parts = SureSolveParts::build(summaries, structure, tau2)?;
    let mut theta = parts.theta;
    if nonneg {
        clamp_nonnegative(&mut theta);
    }
    Ok(MapCenter {
        theta,
        mixers: parts.mixers,
    })
}

/// Aggregated multi-task SURE objective, up to additive constants:
/// `sum_t ||A_t (theta - y_t)||^2_{Sigma_t^{-1}} + 2 Tr(A_t (M_t - I))`,
/// with the analytic gradient over the active parameters.
///
/// The objective always uses the uncorrected linear center, so the
/// gradients below are exact; any nonnegativity correction is applied
/// post hoc by the estimate path.
pub fn mt_objective(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    upsilon2: &[f64],
    variant: Variant,
) -> Result<ObjectiveEval> {
    match variant {
        Variant::MetaMap => mt_objective_metamap(summaries, structure, tau2, upsilon2),
        Variant::SureSolve => mt_objective_suresolve(summaries, structure, tau2),
    }
}

/// Common value + tau2-gradient assembly given the variant-specific center,
/// mixers, and mixer derivatives.
///
/// For each parameter: `dF = sum_t [ 2 dtheta' P_t r_t + r_t' dP_t r_t
/// + 2 tr(dA_t (M_t - I)) + 2 tr(A_t dM_t) ]` with `r_t = theta - y_t`.
fn objective_value(
    summaries: &[TaskSummary],
    tm: &TaskMatrices,
    mixers: &[DMatrix<f64>],
    theta: &DVector<f64>,
) -> f64 {
    let mut value = 0.0;
    for (t, summary) in summaries.iter().enumerate() {
        let r = theta - &summary.y;
        value += r.dot(&(&tm.p[t] * &r));
        value += 2.0 * ((&tm.a[t] * &mixers[t]).trace() - tm.a[t].trace());
    }
    value
}

fn mt_objective_metamap(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    upsilon2: &[f64],
) -> Result<ObjectiveEval> {
    let parts = MetaMapParts::build(summaries, structure, tau2, upsilon2)?;
    let t_count = summaries.len();
    let m = structure.subset_count();
    let value = objective_value(summaries, &parts.tm, &parts.mixers, &parts.theta);

    let residuals: Vec<DVector<f64>> = summaries.iter().map(|s| &parts.theta - &s.y).collect();
    let pr: Vec<DVector<f64>> = (0..t_count)
        .map(|t| &parts.tm.p[t] * &residuals[t])
        .collect();

    let mut gradient = DVector::zeros(2 * m);

    // tau2 block
    for i in 0..m {
        let c = structure.gram(i);
        // C_i S_t reused by several terms
        let cs: Vec<DMatrix<f64>> = parts.tm.s.iter().map(|s_t| c * s_t).collect();
        let mut mix_sum = DMatrix::zeros(parts.theta.len(), parts.theta.len());
        for (mix, cs_t) in parts.mixers.iter().zip(&cs) {
            mix_sum += mix * cs_t;
        }
        let dmixers: Vec<DMatrix<f64>> = (0..t_count)
            .map(|t| &mix_sum * &parts.mixers[t] - &parts.mixers[t] * &cs[t])
            .collect();
        let mut dtheta = DVector::zeros(parts.theta.len());
        for (dm, summary) in dmixers.iter().zip(summaries) {
            dtheta += dm * &summary.y;
        }
        let mut g = 0.0;
        for t in 0..t_count {
            let da = -(&parts.tm.a[t] * &cs[t]);
            let dp = -(&parts.tm.s[t] * c * &parts.tm.p[t] + &parts.tm.p[t] * &cs[t]);
            g += 2.0 * dtheta.dot(&pr[t]);
            g += residuals[t].dot(&(&dp * &residuals[t]));
            let m_minus_i = &parts.mixers[t] - DMatrix::identity(da.nrows(), da.ncols());
            g += 2.0 * (&da * &m_minus_i).trace();
            g += 2.0 * (&parts.tm.a[t] * &dmixers[t]).trace();
        }
        gradient[i] = g;
    }

    // upsilon2 block: A_t and P_t do not depend on upsilon2
    for i in 0..m {
        let c = structure.gram(i);
        let qc = &parts.q * c;
        let dtheta = &qc * (&parts.weighted_sum - &parts.sigma_lambda_inv * &parts.theta);
        let mut g = 0.0;
        for (t, pr_t) in pr.iter().enumerate() {
            let dm = &qc * (&parts.tm.s[t] - &parts.sigma_lambda_inv * &parts.mixers[t]);
            g += 2.0 * dtheta.dot(pr_t);
            g += 2.0 * (&parts.tm.a[t] * &dm).trace();
        }
        gradient[m + i] = g;
    }

    Ok(ObjectiveEval { value, gradient })
}

fn mt_objective_suresolve(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
) -> Result<ObjectiveEval> {
    let parts = SureSolveParts::build(summaries, structure, tau2)?;
    let t_count = summaries.len();
    let m = structure.subset_count();
    let value = objective_value(summaries, &parts.tm, &parts.mixers, &parts.theta);

    let residuals: Vec<DVector<f64>> = summaries.iter().map(|s| &parts.theta - &s.y).collect();
    let pr: Vec<DVector<f64>> = (0..t_count)
        .map(|t| &parts.tm.p[t] * &residuals[t])
        .collect();

    let mut gradient = DVector::zeros(m);
    for i in 0..m {
        let c = structure.gram(i);
        let cs: Vec<DMatrix<f64>> = parts.tm.s.iter().map(|s_t| c * s_t).collect();
        let dps: Vec<DMatrix<f64>> = (0..t_count)
            .map(|t| -(&parts.tm.s[t] * c * &parts.tm.p[t] + &parts.tm.p[t] * &cs[t]))
            .collect();
        let d = parts.theta.len();
        let mut dn = DMatrix::zeros(d, d);
        let mut drhs = DVector::zeros(d);
        for (dp, summary) in dps.iter().zip(summaries) {
            dn += dp;
            drhs += dp * &summary.y;
        }
        let dtheta = parts.normal.solve_vec(&(&drhs - &dn * &parts.theta))?;
        let mut g = 0.0;
        for t in 0..t_count {
            let da = -(&parts.tm.a[t] * &cs[t]);
            let dm = parts
                .normal
                .solve_mat(&(&dps[t] - &dn * &parts.mixers[t]))?;
            g += 2.0 * dtheta.dot(&pr[t]);
            g += residuals[t].dot(&(&dps[t] * &residuals[t]));
            let m_minus_i = &parts.mixers[t] - DMatrix::identity(d, d);
            g += 2.0 * (&da * &m_minus_i).trace();
            g += 2.0 * (&parts.tm.a[t] * &dm).trace();
        }
        gradient[i] = g;
    }

    Ok(ObjectiveEval { value, gradient })
}

/// Multi-task estimates at fixed parameters: `mu_t = y_t + A_t (theta - y_t)`
/// with the variant's center (nonnegativity-corrected when `nonneg`).
pub fn mt_estimate(
    summaries: &[TaskSummary],
    structure: &PriorStructure,
    tau2: &[f64],
    upsilon2: &[f64],
    variant: Variant,
    nonneg: bool,
) -> Result<Vec<EstimatorOutput>> {
    let (theta, tm) = match variant {
        Variant::MetaMap => {
            let parts = MetaMapParts::build(summaries, structure, tau2, upsilon2)?;
            (parts.theta, parts.tm)
        }
        Variant::SureSolve => {
            let parts = SureSolveParts::build(summaries, structure, tau2)?;
            (parts.theta, parts.tm)
        }
    };
    let mut theta = theta;
    if nonneg {
        clamp_nonnegative(&mut theta);
    }
    Ok(summaries
        .iter()
        .enumerate()
        .map(|(t, summary)| {
            let mu = &summary.y + &tm.a[t] * (&theta - &summary.y);
            EstimatorOutput::direct(mu, "mt-suremap")
        })
        .collect())
}

/// Divergence of the MAP estimator with a fixed center: `d - Tr(A)`.
pub fn map_divergence(a: &DMatrix<f64>) -> f64 {
    a.nrows() as f64 - a.trace()
}
