use feedback_lab_core::connect::{
    bump_perturbation, dichotomy_frames_from_operators, dichotomy_roughness_probe, green_function_solve,
    invariant_basis_of, perturb_to_hyperbolic, simpson_nonuniform, transversality_test, Which, DEFAULT_ANGLE_TOL,
};
use feedback_lab_core::linalg::orthonormalize;
use feedback_lab_core::model::{goodwin, linear_cyclic, linear_from_matrix, Branch, FeedbackSignature, JacobianMode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(n: usize, k: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, k, &entries[..n * k])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn transversality_criteria_agree(
        n in 3usize..=6,
        im in 0usize..=6,
        ip in 0usize..=6,
        eu in prop::collection::vec(-1.0..1.0f64, 36),
        es in prop::collection::vec(-1.0..1.0f64, 36),
        share in any::<bool>(),
    ) {
        prop_assume!(im <= n && ip <= n);
        let mut u = orthonormalize(&matrix(n, im, &eu));
        let s = orthonormalize(&matrix(n, n - ip, &es));
        prop_assume!(u.ncols() == im && s.ncols() == n - ip);
        if share && im > 0 && s.ncols() > 0 && im + s.ncols() <= n {
            // force a common direction so the sum cannot be everything
            u.set_column(0, &s.column(0));
            u = orthonormalize(&u);
            prop_assume!(u.ncols() == im);
        }
        let r = transversality_test(&u, &s, im, ip, DEFAULT_ANGLE_TOL).unwrap();
        prop_assert!(r.criteria_agree, "{:?}", r);
        prop_assert_eq!(r.fredholm_index, im as i64 - ip as i64);
        if im + (n - ip) < n {
            prop_assert!(!r.transverse);
            prop_assert!(r.span_defect >= n - im - (n - ip));
        }
    }
}

/// Operators near diag(3, 2, 0.4) with a slowly varying coupling.
fn varying_operators(m: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let mut t = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.4]));
            for v in t.iter_mut() {
                *v += 0.1 * (rng.random::<f64>() - 0.5);
            }
            t
        })
        .collect()
}

#[test]
fn green_residual_vanishes_for_random_forcing() {
    let ops = varying_operators(80, 7);
    let u0 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let s0 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let frames = dichotomy_frames_from_operators(&ops, &u0, &s0, 1.0).unwrap();
    assert!(frames.orthonormality_residual <= 1e-10);
    let proj = frames.step_projections().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f: Vec<DVector<f64>> =
        (0..ops.len()).map(|_| DVector::from_fn(3, |_, _| 2.0 * rng.random::<f64>() - 1.0)).collect();
    let sol = green_function_solve(&ops, &proj, &f, 15).unwrap();
    assert!(sol.residual <= 1e-8, "{}", sol.residual);
    let sup = sol.y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(sup < 10.0, "solution not bounded: {sup}");
}

#[test]
fn roughness_is_linear_in_epsilon() {
    let ops = varying_operators(40, 3);
    let u0 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let s0 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let r = dichotomy_roughness_probe(&ops, &u0, &s0, &[1e-4, 1e-3, 1e-2], 5).unwrap();
    let slope = r.slope.unwrap();
    assert!((0.7..=1.3).contains(&slope), "slope {slope}: {:?}", r.entries);
}

#[test]
fn roughness_reports_collapse_when_the_gap_closes() {
    let ops = vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.05, 1.0, 0.97])); 20];
    let u0 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let s0 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let r = dichotomy_roughness_probe(&ops, &u0, &s0, &[1e-4, 0.5], 1).unwrap();
    assert!(r.entries[0].deviation.is_some());
    assert!(r.entries[1].collapse.is_some());
}

proptest! {
    #[test]
    fn simpson_is_exact_on_quadratics(cuts in prop::collection::vec(0.05..1.0f64, 2..12usize), c in prop::collection::vec(-2.0..2.0f64, 3)) {
        let mut t = vec![0.0];
        for h in &cuts {
            t.push(t.last().unwrap() + h);
        }
        let p = |x: f64| c[0] + c[1] * x + c[2] * x * x;
        let y: Vec<f64> = t.iter().map(|&x| p(x)).collect();
        let b = *t.last().unwrap();
        let exact = c[0] * b + c[1] * b * b / 2.0 + c[2] * b.powi(3) / 3.0;
        let got = simpson_nonuniform(&t, &y);
        prop_assert!((got - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "{} vs {}", got, exact);
    }

    #[test]
    fn hyperbolic_shift_moves_linear_spectrum(entries in prop::collection::vec(-1.0..1.0f64, 9), alpha in -0.5..0.5f64) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let f = linear_from_matrix(a.clone(), FeedbackSignature::normalized(3, Branch::SubdiagonalStrict)).unwrap();
        let g = perturb_to_hyperbolic(&f, &[0.0; 3], alpha).unwrap();
        let shifted = g.jacobian(&[0.3, 0.1, -0.2]).unwrap();
        prop_assert!((shifted - a - DMatrix::identity(3, 3) * alpha).amax() <= 1e-10);
    }
}

#[test]
fn hyperbolic_shift_splits_a_center() {
    let f = linear_cyclic(3, 2.0, -1.0).unwrap();
    assert!(invariant_basis_of(&f.jacobian(&[0.0; 3]).unwrap(), Which::Unstable, 1e-8).is_err());
    let g = perturb_to_hyperbolic(&f, &[0.0; 3], 1e-3).unwrap();
    let u = invariant_basis_of(&g.jacobian(&[0.0; 3]).unwrap(), Which::Unstable, 1e-8).unwrap();
    assert_eq!(u.ncols(), 2);
}

#[test]
fn bump_field_is_local_and_smooth() {
    let t = goodwin(24.0, 0.8).unwrap();
    let b = bump_perturbation(&t, 3, (0.5, 0.7), 0.2).unwrap();
    // component 3 depends on (x3, x1)
    let inside = b.evaluate(&[0.7, 9.0, 0.5]).unwrap();
    assert_eq!(inside.as_slice(), &[0.0, 0.0, 1.0]);
    assert_eq!(b.evaluate(&[0.0, 0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    let fd = b.clone().with_jacobian_mode(JacobianMode::CentralDifference(1e-7));
    for x in [[0.85, 0.0, 0.55], [0.7, 1.0, 0.85], [0.62, 2.0, 0.43]] {
        let (ja, jd) = (b.jacobian(&x).unwrap(), fd.jacobian(&x).unwrap());
        assert!((&ja - &jd).amax() < 1e-5 * (1.0 + ja.amax()), "{x:?}: {ja} {jd}");
    }
    assert!(bump_perturbation(&t, 0, (0.0, 0.0), 0.2).is_err());
    assert!(bump_perturbation(&t, 2, (0.0, 0.0), 0.0).is_err());
}
