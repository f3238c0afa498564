use feedback_lab_core::critical::{
    classify_equilibrium, find_equilibria, morse_index_via_exponential, newton_equilibrium, NewtonSettings,
};
use feedback_lab_core::model::{
    bidirectional_synthetic, goodwin, linear_cyclic, repressilator, CyclicVectorField, JacobianMode, SyntheticParams,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Root of `b^3 z (1 + z^p) = 1` by bisection; the Goodwin equilibrium is
/// `(b^2 z, b z, z)`.
fn goodwin_equilibrium(p: f64, b: f64) -> [f64; 3] {
    let g = |z: f64| b.powi(3) * z * (1.0 + z.powf(p)) - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0 / b.powi(3));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    [b * b * z, b * z, z]
}

#[test]
fn goodwin_equilibrium_matches_bisection() {
    for (p, b) in [(2.0, 1.0), (24.0, 0.8), (8.0, 0.6)] {
        let f = goodwin(p, b).unwrap();
        let found = find_equilibria(&f, &[1e-3; 3], &[3.0; 3], 4, &NewtonSettings::default()).unwrap();
        assert_eq!(found.equilibria.len(), 1, "p = {p}");
        let e = &found.equilibria[0];
        let oracle = goodwin_equilibrium(p, b);
        for (a, o) in e.x.iter().zip(oracle) {
            assert!((a - o).abs() < 1e-10, "p = {p}: {a} vs {o}");
        }
    }
    // (2, 1) is stable, (24, 0.8) has an unstable focus
    assert_eq!(
        classify_equilibrium(&goodwin(2.0, 1.0).unwrap(), &goodwin_equilibrium(2.0, 1.0), 1e-8).unwrap().morse_index,
        0
    );
    assert_eq!(
        classify_equilibrium(&goodwin(24.0, 0.8).unwrap(), &goodwin_equilibrium(24.0, 0.8), 1e-8).unwrap().morse_index,
        2
    );
}

#[test]
fn linear_cyclic_indices_follow_closed_form() {
    for (c, expect) in [(1.0, 0), (3.0, 2), (0.5, 0), (1.5, 0), (2.5, 2)] {
        let e = classify_equilibrium(&linear_cyclic(3, c, -1.0).unwrap(), &[0.0; 3], 1e-8).unwrap();
        // eigenvalues -1 + c exp(i pi (2k+1)/3)
        let closed =
            (0..3).filter(|k| -1.0 + c * (std::f64::consts::PI * (2 * k + 1) as f64 / 3.0).cos() > 0.0).count();
        assert_eq!(e.morse_index, closed);
        assert_eq!(e.morse_index, expect);
        assert!(e.hyperbolic);
    }
    assert!(!classify_equilibrium(&linear_cyclic(3, 2.0, -1.0).unwrap(), &[0.0; 3], 1e-8).unwrap().hyperbolic);
}

fn zoo() -> Vec<(CyclicVectorField, Vec<f64>)> {
    vec![
        (goodwin(24.0, 0.8).unwrap(), vec![0.7, 0.9, 1.1]),
        (repressilator(10.0, 1.0, 2.0).unwrap(), vec![1.0, 2.0, 0.5, 1.5, 3.0, 0.7]),
        (bidirectional_synthetic(3, SyntheticParams::bistable3()).unwrap(), vec![0.4, -0.3, 0.8]),
        (linear_cyclic(5, 1.3, -0.7).unwrap(), vec![0.1, -0.2, 0.3, 0.4, -0.5]),
    ]
}

#[test]
fn analytic_jacobians_match_differences() {
    for (f, x) in zoo() {
        let fd = f.clone().with_jacobian_mode(JacobianMode::CentralDifference(1e-6));
        let (a, d) = (f.jacobian(&x).unwrap(), fd.jacobian(&x).unwrap());
        assert!((&a - &d).amax() < 1e-7 * (1.0 + a.amax()), "{}: {}", f.name(), (&a - &d).amax());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newton_contracts_near_each_synthetic_equilibrium(idx in 0usize..27, dir in prop::collection::vec(-1.0..1.0f64, 3), r in 1e-6..1e-2f64) {
        let f = bidirectional_synthetic(3, SyntheticParams::bistable3()).unwrap();
        let all = find_equilibria(&f, &[-1.6; 3], &[1.6; 3], 8, &NewtonSettings::default()).unwrap().equilibria;
        prop_assert_eq!(all.len(), 27);
        let e = &all[idx];
        let nd = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let x0: Vec<f64> = e.x.iter().zip(&dir).map(|(a, d)| a + r * d / nd).collect();
        let x = newton_equilibrium(&f, &x0, &NewtonSettings::default()).unwrap();
        let err = x.iter().zip(&e.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "{}", err);
    }

    #[test]
    fn morse_index_agrees_across_routes(entries in prop::collection::vec(-2.0..2.0f64, 16)) {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let eigs = a.complex_eigenvalues();
        prop_assume!(eigs.iter().all(|l| l.re.abs() > 1e-6));
        let direct = eigs.iter().filter(|l| l.re > 0.0).count();
        prop_assert_eq!(morse_index_via_exponential(eigs.as_slice(), 1e-12), direct);
        // the period-one map counts eigenvalues outside the unit circle
        let m = a.exp();
        let outside = m.complex_eigenvalues().iter().filter(|l| l.norm() > 1.0).count();
        prop_assert_eq!(outside, direct);
    }
}

#[test]
fn synthetic_census_has_all_indices() {
    let f = bidirectional_synthetic(3, SyntheticParams::bistable3()).unwrap();
    let all = find_equilibria(&f, &[-1.6; 3], &[1.6; 3], 8, &NewtonSettings::default()).unwrap().equilibria;
    let mut counts = [0usize; 4];
    for e in &all {
        assert!(e.hyperbolic && e.simple);
        counts[e.morse_index] += 1;
    }
    // each coordinate is near 0 (unstable direction) or near a stable branch
    assert_eq!(counts, [8, 12, 6, 1]);
}
