use std::sync::Arc;

use feedback_lab_core::integrate::{
    adjoint_flow, flow_with_variation, integrate, variational_flow, AdjointMethod, CrossingDirection, IntegrateError,
    IntegratorConfig, SectionSpec,
};
use feedback_lab_core::model::{
    goodwin, linear_from_matrix, Branch, ClosureRhs, CyclicVectorField, DomainBox, FeedbackSignature, JacobianMode,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// exp(A) by scaling and squaring around a truncated Taylor series.
fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.amax() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn sig3() -> FeedbackSignature {
    FeedbackSignature::normalized(3, Branch::SubdiagonalStrict)
}

fn field_from<F>(name: &str, f: F) -> CyclicVectorField
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
{
    let rhs = ClosureRhs::<F, fn(&[f64], &mut DMatrix<f64>)> { n: 3, f, jac: None };
    CyclicVectorField::new(name, Arc::new(rhs), JacobianMode::CentralDifference(1e-6), DomainBox::whole(3), sig3())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_flow_matches_taylor_exponential(entries in prop::collection::vec(-1.5..1.5f64, 9), t in 0.1..2.0f64) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let field = linear_from_matrix(a.clone(), sig3()).unwrap();
        let (_, phi) = flow_with_variation(&field, &[1.0, 0.0, 0.0], t, &IntegratorConfig::default()).unwrap();
        let oracle = expm_taylor(&(a * t));
        prop_assert!((&phi - &oracle).amax() <= 1e-7 * (1.0 + oracle.amax()), "{}", (&phi - &oracle).amax());
    }

    #[test]
    fn solution_operator_is_a_cocycle(t1 in 0.2..3.0f64, t2 in 0.2..3.0f64, x in prop::collection::vec(0.2..2.0f64, 3)) {
        let f = goodwin(8.0, 0.6).unwrap();
        let cfg = IntegratorConfig::default();
        let s01 = variational_flow(&f, &x, 0.0, t1, &cfg).unwrap();
        let x1 = integrate(&f, &x, 0.0, t1, &cfg).unwrap().final_state().to_vec();
        let s12 = variational_flow(&f, &x1, t1, t1 + t2, &cfg).unwrap();
        let s02 = variational_flow(&f, &x, 0.0, t1 + t2, &cfg).unwrap();
        prop_assert!((&s12 * &s01 - &s02).amax() <= 1e-6 * (1.0 + s02.amax()));
    }

    #[test]
    fn adjoint_is_dual_to_variation(
        phi in prop::collection::vec(-1.0..1.0f64, 3),
        v in prop::collection::vec(-1.0..1.0f64, 3),
        t in 0.5..4.0f64,
    ) {
        let f = goodwin(8.0, 0.6).unwrap();
        let cfg = IntegratorConfig::default();
        let x0 = [0.5, 0.8, 1.1];
        let base = integrate(&f, &x0, 0.0, t, &cfg).unwrap();
        let s = variational_flow(&f, &x0, 0.0, t, &cfg).unwrap();
        let star = adjoint_flow(&f, &base, t, 0.0, &cfg, AdjointMethod::Backward).unwrap();
        let (phi, v) = (DVector::from_vec(phi), DVector::from_vec(v));
        let lhs = (star * &phi).dot(&v);
        let rhs = phi.dot(&(s * &v));
        prop_assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn backward_run_returns_to_start(x in prop::collection::vec(0.2..2.0f64, 3), t in 0.5..5.0f64) {
        let f = goodwin(8.0, 0.6).unwrap();
        let cfg = IntegratorConfig::default();
        let fwd = integrate(&f, &x, 0.0, t, &cfg).unwrap();
        let back = integrate(&f, fwd.final_state(), t, 0.0, &cfg).unwrap();
        let err = back.final_state().iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // local errors of the return leg are amplified by the backward flow
        let inv = variational_flow(&f, &x, 0.0, t, &cfg).unwrap().try_inverse().unwrap();
        let amplification = inv.amax() * 3.0;
        prop_assert!(err <= 1e-8 * amplification.max(1.0), "{} (amplification {})", err, amplification);
    }
}

#[test]
fn rotation_crosses_at_full_turns() {
    let f = field_from("rotation", |x, o| {
        o[0] = -x[1];
        o[1] = x[0];
        o[2] = -x[2];
    });
    let phase: f64 = 0.3;
    let x0 = [phase.cos(), -phase.sin(), 1.0];
    let traj = integrate(&f, &x0, 0.0, 20.0, &IntegratorConfig::default()).unwrap();
    let sec = SectionSpec::new(vec![0.0, 1.0, 0.0], 0.0, CrossingDirection::Increasing).unwrap();
    let hits = traj.section_crossings(&sec, 1e-12);
    assert_eq!(hits.len(), 4);
    for (k, c) in hits.iter().enumerate() {
        let expect = phase + std::f64::consts::TAU * k as f64;
        assert!((c.t - expect).abs() < 1e-7, "crossing {k} at {} not {expect}", c.t);
        assert!((c.x[0] - 1.0).abs() < 1e-7);
    }
}

#[test]
fn quadratic_growth_blows_up_near_its_pole() {
    let f = field_from("square", |x, o| {
        o[0] = x[0] * x[0];
        o[1] = -x[1];
        o[2] = -x[2];
    });
    let x0 = 2.0;
    match integrate(&f, &[x0, 1.0, 1.0], 0.0, 5.0, &IntegratorConfig::default()) {
        Err(IntegrateError::BlowUp { time, .. }) => assert!((time - 1.0 / x0).abs() < 1e-6, "{time}"),
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn dense_output_reproduces_exponential_decay() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -0.5, -2.0]));
    let f = linear_from_matrix(a, sig3()).unwrap();
    let traj = integrate(&f, &[1.0, 1.0, 1.0], 0.0, 3.0, &IntegratorConfig::default()).unwrap();
    for k in 0..=60 {
        let t = 0.05 * k as f64;
        let x = traj.interpolate(t).unwrap();
        for (xi, rate) in x.iter().zip([-1.0, -0.5, -2.0]) {
            assert!((xi - (rate * t).exp()).abs() < 1e-8);
        }
    }
}
