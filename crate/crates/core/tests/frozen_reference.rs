//! Frozen reference values for one fixed two-task instance, computed with
//! an independent dense linear-algebra implementation (explicit solves of
//! the textbook formulas, finite-difference gradients). Guards the whole
//! objective stack against silent regressions.

use std::sync::Arc;

use nalgebra::DVector;
use suremap::objectives::{
    mt_estimate, mt_objective, st_objective, theta_metamap, theta_suresolve, Variant,
};
use suremap::prior::{build_structure, DEFAULT_GROUP_LIMIT};
use suremap::{AttributeSpace, TaskSummary};

fn instance() -> (suremap::prior::PriorStructure, Vec<TaskSummary>) {
    let space = Arc::new(AttributeSpace::from_level_counts(&[2, 3]).unwrap());
    let structure = build_structure(space.clone(), DEFAULT_GROUP_LIMIT).unwrap();
    let t1 = TaskSummary::new(
        space.clone(),
        DVector::from_row_slice(&[0.2, -0.1, 0.4, 0.3, 0.0, 0.25]),
        vec![2, 1, 3, 4, 0, 5],
        0.5,
    );
    let t2 = TaskSummary::new(
        space,
        DVector::from_row_slice(&[0.1, 0.2, -0.3, 0.5, 0.35, 0.15]),
        vec![1, 2, 6, 1, 2, 3],
        0.5,
    );
    (structure, vec![t1, t2])
}

const TAU2: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
const UPS2: [f64; 4] = [0.25, 0.15, 0.1, 0.05];

fn assert_close(actual: f64, expected: f64, rel: f64) {
    let tol = rel * expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= tol,
        "expected {expected}, got {actual}"
    );
}

#[test]
fn single_task_objective_matches_reference() {
    let (s, tasks) = instance();
    let eval = st_objective(&tasks[0], &s, &TAU2).unwrap();
    assert_close(eval.value, -5.160944021516591, 1e-12);
    let expected_grad = [
        0.17548816705400838,
        0.8891549851194697,
        2.7327412876407355,
        6.8504775562656715,
    ];
    for (g, e) in eval.gradient.iter().zip(expected_grad) {
        assert_close(*g, e, 1e-11);
    }
}

#[test]
fn metamap_objective_and_center_match_reference() {
    let (s, tasks) = instance();
    let eval = mt_objective(&tasks, &s, &TAU2, &UPS2, Variant::MetaMap).unwrap();
    assert_close(eval.value, -8.590044024505852, 1e-12);
    // finite-difference reference gradients (h = 1e-6)
    let expected_tau = [
        0.22402177268787682,
        1.135053960155119,
        3.944925501819796,
        11.842387937832655,
    ];
    let expected_ups = [
        0.08001805706925325,
        0.5459038687760653,
        2.4889868850408448,
        9.418508375880208,
    ];
    for (i, (t, u)) in expected_tau.iter().zip(&expected_ups).enumerate() {
        assert_close(eval.gradient[i], *t, 1e-6);
        assert_close(eval.gradient[4 + i], *u, 1e-6);
    }

    let center = theta_metamap(&tasks, &s, &TAU2, &UPS2, false).unwrap();
    let expected_theta = [
        0.07900061779017481,
        0.05120303376846281,
        0.022020436472729943,
        0.1737642198918027,
        0.1264277388907906,
        0.10452676115617576,
    ];
    for (t, e) in center.theta.iter().zip(expected_theta) {
        assert_close(*t, e, 1e-12);
    }

    let estimates = mt_estimate(&tasks, &s, &TAU2, &UPS2, Variant::MetaMap, false).unwrap();
    let expected_mu1 = [
        0.2161756201578156,
        0.07469101652250296,
        0.3016010733875132,
        0.2823230288190765,
        0.13562590650109937,
        0.2629200118276175,
    ];
    for (m, e) in estimates[0].mu_hat.iter().zip(expected_mu1) {
        assert_close(*m, e, 1e-12);
    }
}

#[test]
fn suresolve_objective_and_center_match_reference() {
    let (s, tasks) = instance();
    let eval = mt_objective(&tasks, &s, &TAU2, &[0.0; 4], Variant::SureSolve).unwrap();
    assert_close(eval.value, -5.143985790697572, 1e-12);
    let expected_tau = [
        0.18078694363765635,
        0.8934387336623217,
        3.035464046341474,
        6.170962062679308,
    ];
    for (i, t) in expected_tau.iter().enumerate() {
        assert_close(eval.gradient[i], *t, 1e-6);
    }

    let center = theta_suresolve(&tasks, &s, &TAU2, false).unwrap();
    let expected_theta = [
        0.20348920337844403,
        0.07570981929843262,
        0.1263364147094696,
        0.4204477794931241,
        0.08925646969209275,
        0.22284562016682222,
    ];
    for (t, e) in center.theta.iter().zip(expected_theta) {
        assert_close(*t, e, 1e-12);
    }
}
