//! The integer-valued Lyapunov function N, its neighbourhood bounds and the
//! nested cones built from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FeedbackSignature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("cone index h = {h} outside 1..={max}")]
    InvalidConeIndex { h: usize, max: usize },
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown convention '{0}'")]
    UnknownConvention(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// delta_i weights x_i x_{i+1}.
    EdgeForward,
    /// delta_i weights x_i x_{i-1}.
    EdgeBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountedSign {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct NConvention {
    pub pairing: Pairing,
    pub counted_sign: CountedSign,
}

impl Default for NConvention {
    fn default() -> Self {
        Self::EDGE_FORWARD_NEGATIVE
    }
}

impl NConvention {
    pub const EDGE_FORWARD_NEGATIVE: Self = Self { pairing: Pairing::EdgeForward, counted_sign: CountedSign::Negative };
    pub const EDGE_FORWARD_POSITIVE: Self = Self { pairing: Pairing::EdgeForward, counted_sign: CountedSign::Positive };
    pub const EDGE_BACKWARD_NEGATIVE: Self =
        Self { pairing: Pairing::EdgeBackward, counted_sign: CountedSign::Negative };
    /// The formula `card{i : delta_i x_i x_{i-1} > 0}` read literally.
    pub const EDGE_BACKWARD_POSITIVE: Self = Self { pairing: Pairing::EdgeBackward, counted_sign: CountedSign::Positive };

    pub const ALL: [Self; 4] =
        [Self::EDGE_FORWARD_NEGATIVE, Self::EDGE_FORWARD_POSITIVE, Self::EDGE_BACKWARD_NEGATIVE, Self::EDGE_BACKWARD_POSITIVE];

    pub fn name(&self) -> &'static str {
        match (self.pairing, self.counted_sign) {
            (Pairing::EdgeForward, CountedSign::Negative) => "edge_forward_negative",
            (Pairing::EdgeForward, CountedSign::Positive) => "edge_forward_positive",
            (Pairing::EdgeBackward, CountedSign::Negative) => "edge_backward_negative",
            (Pairing::EdgeBackward, CountedSign::Positive) => "edge_backward_positive",
        }
    }

    /// Sign attached to edge (i, i+1), flipped for positive counting so that
    /// every convention counts negative weighted products.
    fn edge_weights(&self, sig: &FeedbackSignature) -> Vec<i8> {
        let n = sig.n;
        (0..n)
            .map(|i| {
                let d = match self.pairing {
                    Pairing::EdgeForward => sig.delta[i],
                    Pairing::EdgeBackward => sig.delta[(i + 1) % n],
                };
                match self.counted_sign {
                    CountedSign::Negative => d,
                    CountedSign::Positive => -d,
                }
            })
            .collect()
    }
}

impl fmt::Display for NConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NConvention {
    type Err = LyapunovError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge_forward_negative" | "default" => Ok(Self::EDGE_FORWARD_NEGATIVE),
            "edge_forward_positive" => Ok(Self::EDGE_FORWARD_POSITIVE),
            "edge_backward_negative" => Ok(Self::EDGE_BACKWARD_NEGATIVE),
            "edge_backward_positive" => Ok(Self::EDGE_BACKWARD_POSITIVE),
            other => Err(LyapunovError::UnknownConvention(other.into())),
        }
    }
}

impl From<NConvention> for String {
    fn from(c: NConvention) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for NConvention {
    type Error = LyapunovError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NValue {
    pub value: usize,
    pub defined: bool,
    pub convention: NConvention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NBounds {
    pub n_m: usize,
    #[serde(rename = "n_M")]
    pub n_big_m: usize,
    pub in_regular_set: bool,
    pub zero_vector: bool,
}

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn n_value(x: &[f64], sig: &FeedbackSignature, conv: NConvention) -> NValue {
    let n = sig.n;
    assert_eq!(x.len(), n, "n_value: length mismatch");
    let w = conv.edge_weights(sig);
    let s: Vec<i8> = x.iter().map(|&v| sgn(v)).collect();
    let value = (0..n).filter(|&i| w[i] * s[i] * s[(i + 1) % n] < 0).count();
    NValue { value, defined: s.iter().all(|&v| v != 0), convention: conv }
}

/// Extreme counts of negative edges on a chain of `edges` edges whose sign
/// product is fixed; all counts of the right parity are attainable.
fn chain_range(edges: usize, odd: bool) -> (usize, usize) {
    let lo = usize::from(odd);
    let hi = if (edges % 2 == 1) == odd { edges } else { edges - 1 };
    (lo, hi)
}

/// Exact `N_m`, `N_M`: each maximal run of zero coordinates is a chain whose
/// end signs are fixed, so only the parity of its negative edges is
/// constrained.
pub fn n_bounds(x: &[f64], sig: &FeedbackSignature, conv: NConvention) -> NBounds {
    let n = sig.n;
    assert_eq!(x.len(), n, "n_bounds: length mismatch");
    let w = conv.edge_weights(sig);
    let s: Vec<i8> = x.iter().map(|&v| sgn(v)).collect();
    let nonzero: Vec<usize> = (0..n).filter(|&i| s[i] != 0).collect();
    if nonzero.is_empty() {
        let odd = w.iter().filter(|&&v| v < 0).count() % 2 == 1;
        let (lo, hi) = chain_range(n, odd);
        return NBounds { n_m: lo, n_big_m: hi, in_regular_set: lo == hi, zero_vector: true };
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    for (k, &a) in nonzero.iter().enumerate() {
        let b = nonzero[(k + 1) % nonzero.len()];
        let edges = if b > a { b - a } else { b + n - a };
        if edges == 1 {
            let neg = usize::from(w[a] * s[a] * s[b] < 0);
            lo += neg;
            hi += neg;
            continue;
        }
        let mut sign = s[a] * s[b];
        for e in 0..edges {
            sign *= w[(a + e) % n];
        }
        let (l, h) = chain_range(edges, sign < 0);
        lo += l;
        hi += h;
    }
    NBounds { n_m: lo, n_big_m: hi, in_regular_set: lo == hi, zero_vector: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    /// `{0} ∪ {N_M <= 2h - 1}`
    Lower,
    /// `{0} ∪ {N_m > 2h - 1}`
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub member: bool,
    pub interior: bool,
}

/// `n` for odd n, `n - 1` for even n.
pub fn n_tilde(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n - 1
    }
}

pub fn max_cone_index(n: usize) -> usize {
    n_tilde(n).div_ceil(2)
}

pub fn in_cone(
    x: &[f64],
    h: usize,
    which: ConeKind,
    sig: &FeedbackSignature,
    conv: NConvention,
) -> Result<ConeMembership, LyapunovError> {
    let n = sig.n;
    if x.len() != n {
        return Err(LyapunovError::DimensionMismatch { expected: n, got: x.len() });
    }
    let max = max_cone_index(n);
    if h == 0 || h > max {
        return Err(LyapunovError::InvalidConeIndex { h, max });
    }
    if x.iter().all(|&v| v == 0.0) {
        return Ok(ConeMembership { member: true, interior: false });
    }
    let b = n_bounds(x, sig, conv);
    let level = 2 * h - 1;
    let member = match which {
        ConeKind::Lower => b.n_big_m <= level,
        ConeKind::Upper => b.n_m > level,
    };
    Ok(ConeMembership { member, interior: member && b.in_regular_set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Branch;

    fn sig3() -> FeedbackSignature {
        FeedbackSignature::normalized(3, Branch::SubdiagonalStrict)
    }

    #[test]
    fn values_under_default() {
        let s = sig3();
        let c = NConvention::default();
        assert_eq!(n_value(&[1.0, -1.0, 1.0], &s, c).value, 3);
        assert_eq!(n_value(&[1.0, 0.5, -0.5], &s, c).value, 1);
        assert!(!n_value(&[1.0, 0.0, -0.5], &s, c).defined);
    }

    #[test]
    fn edge_backward_positive_is_even_for_odd_n() {
        let s = sig3();
        for x in [[1.0, -1.0, 1.0], [1.0, 0.5, -0.5], [-2.0, 1.0, 3.0]] {
            assert_eq!(n_value(&x, &s, NConvention::EDGE_BACKWARD_POSITIVE).value % 2, 0);
        }
    }

    #[test]
    fn bounds_example() {
        let b = n_bounds(&[0.0, 1.0, 0.0], &sig3(), NConvention::EDGE_BACKWARD_NEGATIVE);
        assert_eq!((b.n_m, b.n_big_m, b.in_regular_set), (1, 3, false));
        let z = n_bounds(&[0.0; 3], &sig3(), NConvention::default());
        assert!(z.zero_vector);
        assert_eq!((z.n_m, z.n_big_m), (1, 3));
    }

    #[test]
    fn cone_examples() {
        let s = sig3();
        let c = NConvention::default();
        let zero = in_cone(&[0.0; 3], 1, ConeKind::Lower, &s, c).unwrap();
        assert_eq!(zero, ConeMembership { member: true, interior: false });
        let a = in_cone(&[1.0, 0.5, -0.5], 1, ConeKind::Lower, &s, c).unwrap();
        assert!(a.member && a.interior);
        assert!(!in_cone(&[1.0, -1.0, 1.0], 1, ConeKind::Lower, &s, c).unwrap().member);
        assert!(in_cone(&[1.0, -1.0, 1.0], 1, ConeKind::Upper, &s, c).unwrap().member);
        assert_eq!(
            in_cone(&[1.0; 3], 3, ConeKind::Lower, &s, c),
            Err(LyapunovError::InvalidConeIndex { h: 3, max: 2 })
        );
    }

    #[test]
    fn convention_names_round_trip() {
        for c in NConvention::ALL {
            assert_eq!(c.name().parse::<NConvention>().unwrap(), c);
        }
        assert!("nope".parse::<NConvention>().is_err());
    }
}
