//! Ordered invariant blocks of solution operators and the checks of their
//! N-labels and cone invariance.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{variational_flow, IntegrateError, IntegratorConfig};
use crate::linalg;
use crate::lyapunov::{in_cone, max_cone_index, n_bounds, n_tilde, ConeKind, LyapunovError, NConvention};
use crate::model::{CyclicVectorField, FeedbackSignature};
use crate::schur::{RealSchur, SchurError};

pub const DEFAULT_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("modulus ordering splits a complex pair at position {0}")]
    BlockSplit(usize),
    #[error("modulus gaps below tolerance: {:?}", .0.gaps)]
    GapViolation(Box<FloquetDecomposition>),
    #[error(transparent)]
    Schur(#[from] SchurError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloquetBlock {
    pub basis: DMatrix<f64>,
    pub nu: f64,
    pub mu: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    /// Equal eigenvalues without a full set of eigenvectors.
    pub defective: bool,
    /// `‖M B - B (B^T M B)‖ / ‖M‖`.
    pub invariance_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloquetDecomposition {
    pub n: usize,
    pub n_tilde: usize,
    pub blocks: Vec<FloquetBlock>,
    pub gaps: Vec<f64>,
    pub gap_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockExport {
    pub dim: usize,
    /// Row-major n x d.
    pub basis: Vec<Vec<f64>>,
    pub nu: f64,
    pub mu: f64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub defective: bool,
    pub invariance_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionExport {
    pub n: usize,
    pub n_tilde: usize,
    pub blocks: Vec<BlockExport>,
    pub gaps: Vec<f64>,
    pub gap_ok: bool,
}

impl FloquetDecomposition {
    pub fn export(&self) -> DecompositionExport {
        DecompositionExport {
            n: self.n,
            n_tilde: self.n_tilde,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockExport {
                    dim: b.basis.ncols(),
                    basis: linalg::matrix_to_rows(&b.basis),
                    nu: b.nu,
                    mu: b.mu,
                    eigenvalues: b.eigenvalues.iter().map(|c| [c.re, c.im]).collect(),
                    defective: b.defective,
                    invariance_residual: b.invariance_residual,
                })
                .collect(),
            gaps: self.gaps.clone(),
            gap_ok: self.gap_ok,
        }
    }

    /// Orthonormal basis of `W_i ⊕ ... ⊕ W_k` (1-based, inclusive).
    pub fn sum_basis(&self, i: usize, k: usize) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.blocks[i - 1..k]
            .iter()
            .flat_map(|b| b.basis.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
            .collect();
        linalg::orthonormalize(&DMatrix::from_columns(&cols))
    }
}

pub fn invariant_blocks(m: &DMatrix<f64>, gap_tol: f64) -> Result<FloquetDecomposition, FloquetError> {
    let n = m.nrows();
    let schur = RealSchur::new(m)?;
    let blocks = schur.blocks().to_vec();
    let moduli: Vec<f64> = blocks.iter().map(|&b| schur.block_eigenvalues(b)[0].norm()).collect();
    let split_moduli: Vec<Vec<f64>> =
        blocks.iter().map(|&b| schur.block_eigenvalues(b).iter().map(|c| c.norm()).collect()).collect();
    if split_moduli.iter().flatten().any(|&v| !(v > f64::MIN_POSITIVE) || !v.is_finite()) {
        return Err(FloquetError::SingularMatrix);
    }
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| moduli[b].total_cmp(&moduli[a]));

    let mut group_of = vec![0usize; blocks.len()];
    let mut offset = 0;
    for &k in &order {
        if blocks[k].size == 2 && offset % 2 == 1 {
            return Err(FloquetError::BlockSplit(offset));
        }
        group_of[k] = offset / 2;
        offset += blocks[k].size;
    }
    let groups = n.div_ceil(2);
    let mnorm = m.norm().max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut s = schur.clone();
        let flags: Vec<bool> = (0..blocks.len()).map(|k| group_of[k] == g).collect();
        let d = s.move_flagged_to_front(&flags)?;
        let basis = s.leading_basis(d);
        let eigenvalues: Vec<Complex<f64>> =
            (0..blocks.len()).filter(|&k| flags[k]).flat_map(|k| schur.block_eigenvalues(blocks[k])).collect();
        let mods: Vec<f64> = eigenvalues.iter().map(|c| c.norm()).collect();
        let nu = mods.iter().copied().fold(f64::INFINITY, f64::min);
        let mu = mods.iter().copied().fold(0.0, f64::max);
        let restricted = basis.transpose() * m * &basis;
        let invariance_residual = (m * &basis - &basis * &restricted).norm() / mnorm;
        let defective = d == 2 && eigenvalues.iter().all(|c| c.im == 0.0) && {
            let (a, b) = (eigenvalues[0].re, eigenvalues[1].re);
            let scale = a.abs().max(b.abs());
            (a - b).abs() <= 1e-8 * scale && {
                let mean = 0.5 * (a + b);
                (&restricted - DMatrix::from_diagonal_element(2, 2, mean)).norm() > 1e-6 * scale
            }
        };
        out.push(FloquetBlock { basis, nu, mu, eigenvalues, defective, invariance_residual });
    }
    let gaps: Vec<f64> = out.windows(2).map(|w| w[0].nu - w[1].mu).collect();
    let mu1 = out[0].mu;
    let gap_ok = gaps.iter().all(|&g| g > gap_tol * mu1);
    let dec = FloquetDecomposition { n, n_tilde: n_tilde(n), blocks: out, gaps, gap_ok };
    if gap_ok {
        Ok(dec)
    } else {
        Err(FloquetError::GapViolation(Box::new(dec)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNCheck {
    pub block: usize,
    pub expected: usize,
    pub passes: usize,
    pub failures: usize,
    pub witnesses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumNCheck {
    pub i: usize,
    pub k: usize,
    pub passes: usize,
    pub failures: usize,
    pub witnesses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNReport {
    pub convention: NConvention,
    pub blocks: Vec<BlockNCheck>,
    pub sums: Vec<SumNCheck>,
    pub total_failures: usize,
}

const MAX_WITNESSES: usize = 5;

/// Coordinates below `rel * |v|` are treated as exact zeros.
fn snap(v: &mut [f64], rel: f64) {
    let scale = linalg::norm(v);
    for x in v.iter_mut() {
        if x.abs() <= rel * scale {
            *x = 0.0;
        }
    }
}

fn random_in_span(basis: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut v: Vec<f64> = (basis * g).iter().copied().collect();
    let len = linalg::norm(&v);
    v.iter_mut().for_each(|x| *x /= len);
    snap(&mut v, 1e-12);
    v
}

pub fn verify_block_nvalues(
    decomp: &FloquetDecomposition,
    sig: &FeedbackSignature,
    conv: NConvention,
    samples: usize,
    seed: u64,
) -> BlockNReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = decomp.blocks.len();
    let mut blocks = Vec::with_capacity(nb);
    for (idx, b) in decomp.blocks.iter().enumerate() {
        let expected = 2 * (idx + 1) - 1;
        let mut c = BlockNCheck { block: idx + 1, expected, passes: 0, failures: 0, witnesses: Vec::new() };
        for _ in 0..samples {
            let v = random_in_span(&b.basis, &mut rng);
            let nb = n_bounds(&v, sig, conv);
            if nb.n_m == expected && nb.n_big_m == expected {
                c.passes += 1;
            } else {
                c.failures += 1;
                if c.witnesses.len() < MAX_WITNESSES {
                    c.witnesses.push(v);
                }
            }
        }
        blocks.push(c);
    }
    let mut sums = Vec::new();
    for i in 1..=nb {
        for k in i..=nb {
            let basis = decomp.sum_basis(i, k);
            let mut c = SumNCheck { i, k, passes: 0, failures: 0, witnesses: Vec::new() };
            for _ in 0..samples {
                let v = random_in_span(&basis, &mut rng);
                let nb = n_bounds(&v, sig, conv);
                if nb.n_m >= 2 * i - 1 && nb.n_big_m <= 2 * k - 1 {
                    c.passes += 1;
                } else {
                    c.failures += 1;
                    if c.witnesses.len() < MAX_WITNESSES {
                        c.witnesses.push(v);
                    }
                }
            }
            sums.push(c);
        }
    }
    let total_failures =
        blocks.iter().map(|b| b.failures).sum::<usize>() + sums.iter().map(|s| s.failures).sum::<usize>();
    BlockNReport { convention: conv, blocks, sums, total_failures }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub h: usize,
    pub cone: ConeKind,
    pub checked: usize,
    pub boundary_samples: usize,
    pub violations: usize,
    pub witnesses: Vec<Vec<f64>>,
}

/// Random nonzero member of the cone. Odd draws put one coordinate at
/// exactly zero, which lands on the cone boundary when accepted.
pub fn sample_cone_vector(
    n: usize,
    h: usize,
    which: ConeKind,
    sig: &FeedbackSignature,
    conv: NConvention,
    boundary: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    for _ in 0..10_000 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if boundary {
            let j = rng.random_range(0..n);
            v[j] = 0.0;
        }
        if in_cone(&v, h, which, sig, conv).ok()?.member {
            return Some(v);
        }
    }
    None
}

/// Applies a fixed operator to sampled cone vectors and checks the images
/// land in the interior.
pub fn check_cone_map(
    op: &DMatrix<f64>,
    h: usize,
    which: ConeKind,
    sig: &FeedbackSignature,
    conv: NConvention,
    samples: usize,
    seed: u64,
) -> Result<ConeReport, FloquetError> {
    let n = sig.n;
    let max = max_cone_index(n);
    if h == 0 || h > max {
        return Err(LyapunovError::InvalidConeIndex { h, max }.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ConeReport { h, cone: which, checked: 0, boundary_samples: 0, violations: 0, witnesses: Vec::new() };
    for k in 0..samples {
        let boundary = k % 2 == 1;
        let Some(v) = sample_cone_vector(n, h, which, sig, conv, boundary, &mut rng) else {
            continue;
        };
        if boundary && v.contains(&0.0) {
            rep.boundary_samples += 1;
        }
        let w: Vec<f64> = (op * DVector::from_vec(v.clone())).iter().copied().collect();
        rep.checked += 1;
        if !in_cone(&w, h, which, sig, conv)?.interior {
            rep.violations += 1;
            if rep.witnesses.len() < MAX_WITNESSES {
                rep.witnesses.push(v);
            }
        }
    }
    Ok(rep)
}

/// Propagates cone vectors with `S(s, t)` along the orbit of `x0` (the
/// state at time `s`). The lower cone needs `t > s`, the upper `t < s`.
#[allow(clippy::too_many_arguments)]
pub fn verify_cone_invariance(
    field: &CyclicVectorField,
    x0: &[f64],
    h: usize,
    which: ConeKind,
    s: f64,
    t: f64,
    samples: usize,
    seed: u64,
    conv: NConvention,
    cfg: &IntegratorConfig,
) -> Result<ConeReport, FloquetError> {
    match which {
        ConeKind::Lower if t <= s => return Err(FloquetError::InvalidInterval("lower cone needs t > s".into())),
        ConeKind::Upper if t >= s => return Err(FloquetError::InvalidInterval("upper cone needs t < s".into())),
        _ => {}
    }
    let op = variational_flow(field, x0, s, t, cfg)?;
    check_cone_map(&op, h, which, field.signature(), conv, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_blocks() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 3.0, 0.5, 0.2]));
        let d = invariant_blocks(&m, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(d.blocks.len(), 2);
        assert_eq!((d.blocks[0].mu, d.blocks[0].nu), (4.0, 3.0));
        assert_eq!((d.blocks[1].mu, d.blocks[1].nu), (0.5, 0.2));
        let b = &d.blocks[0].basis;
        assert!((b.rows(0, 2).into_owned().determinant().abs() - 1.0).abs() < 1e-12);
        assert!(d.gaps[0] > 0.0);
    }

    #[test]
    fn identity_violates_gap() {
        assert!(matches!(
            invariant_blocks(&DMatrix::identity(3, 3), DEFAULT_GAP_TOL),
            Err(FloquetError::GapViolation(_))
        ));
    }

    #[test]
    fn singular_is_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 2.0]));
        assert!(matches!(invariant_blocks(&m, DEFAULT_GAP_TOL), Err(FloquetError::SingularMatrix)));
    }

    #[test]
    fn split_pair_is_reported() {
        // moduli: real 2, complex pair of modulus 1, real 0.5 -> pair starts at offset 1
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5],
        );
        assert!(matches!(invariant_blocks(&m, DEFAULT_GAP_TOL), Err(FloquetError::BlockSplit(1))));
    }

    #[test]
    fn jordan_block_is_flagged_defective() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let d = invariant_blocks(&m, DEFAULT_GAP_TOL).unwrap();
        assert!(d.blocks[0].defective);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 3.0, 1.0]));
        assert!(!invariant_blocks(&m, DEFAULT_GAP_TOL).unwrap().blocks[0].defective);
    }
}
