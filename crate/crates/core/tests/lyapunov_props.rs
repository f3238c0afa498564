use feedback_lab_core::integrate::{integrate, IntegratorConfig};
use feedback_lab_core::lyapunov::{
    in_cone, max_cone_index, n_bounds, n_value, ConeKind, CountedSign, NConvention, Pairing,
};
use feedback_lab_core::model::{check_mminus, linear_from_matrix, Branch, FeedbackSignature};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Counts weighted products of the requested sign directly from the
/// definition, with no edge-weight table.
fn count_direct(y: &[i8], delta: &[i8], conv: NConvention) -> usize {
    let n = y.len();
    (0..n)
        .filter(|&i| {
            let p = match conv.pairing {
                Pairing::EdgeForward => delta[i] * y[i] * y[(i + 1) % n],
                Pairing::EdgeBackward => delta[i] * y[i] * y[(i + n - 1) % n],
            };
            match conv.counted_sign {
                CountedSign::Negative => p < 0,
                CountedSign::Positive => p > 0,
            }
        })
        .count()
}

/// Min and max of N over every sign completion of the zero coordinates.
fn brute_bounds(x: &[f64], delta: &[i8], conv: NConvention) -> (usize, usize) {
    let zeros: Vec<usize> = (0..x.len()).filter(|&i| x[i] == 0.0).collect();
    let base: Vec<i8> = x.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect();
    let (mut lo, mut hi) = (usize::MAX, 0);
    for mask in 0u32..(1 << zeros.len()) {
        let mut y = base.clone();
        for (b, &i) in zeros.iter().enumerate() {
            y[i] = if mask >> b & 1 == 1 { 1 } else { -1 };
        }
        let v = count_direct(&y, delta, conv);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn signature_strategy() -> impl Strategy<Value = FeedbackSignature> {
    (3usize..=8).prop_flat_map(|n| {
        prop::collection::vec(prop::bool::ANY, n - 1).prop_map(move |flips| {
            let mut delta: Vec<i8> = flips.iter().map(|&f| if f { -1 } else { 1 }).collect();
            let neg = delta.iter().filter(|&&d| d < 0).count();
            delta.push(if neg % 2 == 0 { -1 } else { 1 });
            FeedbackSignature::new(delta, Branch::SubdiagonalStrict).unwrap()
        })
    })
}

fn vector_with_zeros(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -5.0..5.0f64], n)
}

fn convention() -> impl Strategy<Value = NConvention> {
    prop::sample::select(NConvention::ALL.to_vec())
}

proptest! {
    #[test]
    fn bounds_match_enumeration((sig, x) in signature_strategy().prop_flat_map(|s| { let n = s.n; (Just(s), vector_with_zeros(n)) }), conv in convention()) {
        let b = n_bounds(&x, &sig, conv);
        let (lo, hi) = brute_bounds(&x, &sig.delta, conv);
        prop_assert_eq!((b.n_m, b.n_big_m), (lo, hi));
        prop_assert_eq!(b.in_regular_set, lo == hi);
    }

    #[test]
    fn regular_value_agrees_and_is_odd(sig in signature_strategy(), seed in any::<u64>(), conv in convention()) {
        let n = sig.n;
        let x: Vec<f64> = (0..n).map(|i| if (seed >> i) & 1 == 1 { 1.0 + i as f64 } else { -0.5 - i as f64 }).collect();
        let v = n_value(&x, &sig, conv);
        prop_assert!(v.defined);
        let b = n_bounds(&x, &sig, conv);
        prop_assert_eq!((b.n_m, b.n_big_m), (v.value, v.value));
        // negative counting sees the loop sign -1; positive counting sees (-1)^(n+1)
        let odd_expected = conv.counted_sign == CountedSign::Negative || n % 2 == 0;
        prop_assert_eq!(v.value % 2 == 1, odd_expected);
    }

    #[test]
    fn cones_are_nested_and_scale_invariant(
        (sig, x) in signature_strategy().prop_flat_map(|s| { let n = s.n; (Just(s), vector_with_zeros(n)) }),
        c in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64],
    ) {
        let conv = NConvention::default();
        let max = max_cone_index(sig.n);
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        for h in 1..=max {
            for kind in [ConeKind::Lower, ConeKind::Upper] {
                prop_assert_eq!(in_cone(&x, h, kind, &sig, conv).unwrap(), in_cone(&scaled, h, kind, &sig, conv).unwrap());
            }
            if h < max {
                let lower = in_cone(&x, h, ConeKind::Lower, &sig, conv).unwrap().member;
                prop_assert!(!lower || in_cone(&x, h + 1, ConeKind::Lower, &sig, conv).unwrap().member);
                let upper = in_cone(&x, h + 1, ConeKind::Upper, &sig, conv).unwrap().member;
                prop_assert!(!upper || in_cone(&x, h, ConeKind::Upper, &sig, conv).unwrap().member);
            }
        }
    }
}

/// Random matrix in the normalized pattern, either strict branch.
fn pattern_matrix(n: usize, sub_branch: bool, mags: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    let mut next = || {
        k += 1;
        mags[k - 1]
    };
    for i in 0..n {
        a[(i, i)] = 4.0 * next() - 2.0;
    }
    for i in 0..n {
        let (strict, weak) = (0.1 + next(), if next() < 0.3 { 0.0 } else { next() });
        let sign = if i + 1 < n { 1.0 } else { -1.0 };
        let (sub, sup) = if sub_branch { (strict, weak) } else { (weak, strict) };
        a[((i + 1) % n, i)] = sign * sub;
        a[(i, (i + 1) % n)] = sign * sup;
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mminus_check_is_scale_invariant(n in 3usize..=8, sub in any::<bool>(), mags in prop::collection::vec(0.0..1.0f64, 48), c in 0.01..100.0f64) {
        let sig = FeedbackSignature::normalized(n, Branch::SubdiagonalStrict);
        let a = pattern_matrix(n, sub, &mags);
        let r = check_mminus(&a, &sig, 1e-12).unwrap();
        prop_assert!(r.ok);
        prop_assert_eq!(r, check_mminus(&(a * c), &sig, 1e-12).unwrap());
    }

    #[test]
    fn n_is_odd_and_drops_along_linear_flows(
        n in 3usize..=8,
        sub in any::<bool>(),
        mags in prop::collection::vec(0.0..1.0f64, 48),
        x0 in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        let sig = FeedbackSignature::normalized(n, Branch::SubdiagonalStrict);
        let field = linear_from_matrix(pattern_matrix(n, sub, &mags), sig.clone()).unwrap();
        let x0 = &x0[..n];
        let traj = integrate(&field, x0, 0.0, 5.0, &IntegratorConfig::default()).unwrap();
        let mut last = usize::MAX;
        for k in 0..50 {
            let x = traj.interpolate(5.0 * k as f64 / 49.0).unwrap();
            let v = n_value(&x, &sig, NConvention::default());
            if v.defined {
                prop_assert_eq!(v.value % 2, 1);
                prop_assert!(v.value <= last, "N rose from {} to {}", last, v.value);
                last = v.value;
            }
        }
    }
}

#[test]
fn zero_vector_spans_all_parities() {
    let sig = FeedbackSignature::normalized(5, Branch::SubdiagonalStrict);
    let b = n_bounds(&[0.0; 5], &sig, NConvention::default());
    assert!(b.zero_vector);
    assert_eq!((b.n_m, b.n_big_m), brute_bounds(&[0.0; 5], &sig.delta, NConvention::default()));
}
