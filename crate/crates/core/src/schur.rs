//! Real Schur form with 1x1/2x2 diagonal blocks and adjacent block swaps.
//!
//! Swaps follow the direct method: solve the small Sylvester equation
//! `A11 X - X A22 = A12`, then an orthogonal factor of `[-X; I]` moves the
//! second block in front of the first.

use nalgebra::{Complex, DMatrix, Schur};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchurError {
    #[error("matrix must be square and non-empty")]
    NotSquare,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("QR iteration did not converge")]
    NoConvergence,
    #[error("block swap at {0} failed: blocks share an eigenvalue or the swap was unstable")]
    SwapFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct RealSchur {
    q: DMatrix<f64>,
    t: DMatrix<f64>,
    blocks: Vec<Block>,
}

impl RealSchur {
    pub fn new(m: &DMatrix<f64>) -> Result<Self, SchurError> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(SchurError::NotSquare);
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SchurError::NonFinite);
        }
        let (q, t) = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(SchurError::NoConvergence)?.unpack();
        let mut s = RealSchur { q, t, blocks: Vec::new() };
        s.standardize();
        Ok(s)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn block_eigenvalues(&self, b: Block) -> Vec<Complex<f64>> {
        let i = b.start;
        if b.size == 1 {
            return vec![Complex::new(self.t[(i, i)], 0.0)];
        }
        let (a, bb, c, d) = (self.t[(i, i)], self.t[(i, i + 1)], self.t[(i + 1, i)], self.t[(i + 1, i + 1)]);
        let tr = 0.5 * (a + d);
        let p = 0.5 * (a - d);
        let disc = p * p + bb * c;
        if disc >= 0.0 {
            let r = disc.sqrt();
            vec![Complex::new(tr + r, 0.0), Complex::new(tr - r, 0.0)]
        } else {
            let im = (-disc).sqrt();
            vec![Complex::new(tr, im), Complex::new(tr, -im)]
        }
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.blocks.iter().flat_map(|&b| self.block_eigenvalues(b)).collect()
    }

    /// Leading `k` Schur vectors.
    pub fn leading_basis(&self, k: usize) -> DMatrix<f64> {
        self.q.columns(0, k).into_owned()
    }

    fn rebuild_blocks(&mut self) {
        let n = self.dim();
        self.blocks.clear();
        let mut i = 0;
        while i < n {
            if i + 1 < n && self.t[(i + 1, i)] != 0.0 {
                self.blocks.push(Block { start: i, size: 2 });
                i += 2;
            } else {
                self.blocks.push(Block { start: i, size: 1 });
                i += 1;
            }
        }
    }

    fn standardize(&mut self) {
        let n = self.dim();
        for i in 0..n.saturating_sub(1) {
            let scale = self.t[(i, i)].abs() + self.t[(i + 1, i + 1)].abs();
            if self.t[(i + 1, i)].abs() <= f64::EPSILON * scale {
                self.t[(i + 1, i)] = 0.0;
            }
        }
        for j in 0..n {
            for i in (j + 2)..n {
                self.t[(i, j)] = 0.0;
            }
        }
        // A 3x3 unreduced stretch would need further QR sweeps; split it at
        // the smaller subdiagonal entry.
        for i in 0..n.saturating_sub(2) {
            if self.t[(i + 1, i)] != 0.0 && self.t[(i + 2, i + 1)] != 0.0 {
                if self.t[(i + 1, i)].abs() < self.t[(i + 2, i + 1)].abs() {
                    self.t[(i + 1, i)] = 0.0;
                } else {
                    self.t[(i + 2, i + 1)] = 0.0;
                }
            }
        }
        self.rebuild_blocks();
        let twos: Vec<usize> = self.blocks.iter().filter(|b| b.size == 2).map(|b| b.start).collect();
        for i in twos {
            self.split_if_real(i);
        }
        self.rebuild_blocks();
    }

    fn split_if_real(&mut self, i: usize) {
        let (a, b, c, d) = (self.t[(i, i)], self.t[(i, i + 1)], self.t[(i + 1, i)], self.t[(i + 1, i + 1)]);
        let p = 0.5 * (a - d);
        let disc = p * p + b * c;
        if disc < 0.0 {
            return;
        }
        let lambda = 0.5 * (a + d) + if p >= 0.0 { disc.sqrt() } else { -disc.sqrt() };
        let v1 = (b, lambda - a);
        let v2 = (lambda - d, c);
        let (x, y) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
        let r = x.hypot(y);
        if r == 0.0 {
            self.t[(i + 1, i)] = 0.0;
            return;
        }
        let g = DMatrix::from_row_slice(2, 2, &[x / r, -y / r, y / r, x / r]);
        self.apply_orthogonal(i, &g);
        self.t[(i + 1, i)] = 0.0;
    }

    /// T <- G^T T G and Q <- Q G where G acts on rows/columns `i..i+k`.
    fn apply_orthogonal(&mut self, i: usize, g: &DMatrix<f64>) {
        let k = g.nrows();
        let rows = g.transpose() * self.t.rows(i, k);
        self.t.rows_mut(i, k).copy_from(&rows);
        let cols = self.t.columns(i, k) * g;
        self.t.columns_mut(i, k).copy_from(&cols);
        let qc = self.q.columns(i, k) * g;
        self.q.columns_mut(i, k).copy_from(&qc);
    }

    /// Swaps blocks `k` and `k + 1`.
    pub fn swap_adjacent(&mut self, k: usize) -> Result<(), SchurError> {
        let b1 = self.blocks[k];
        let b2 = self.blocks[k + 1];
        let (j, p, q) = (b1.start, b1.size, b2.size);
        if p == 1 && q == 1 {
            // (t12, t22 - t11) is an eigenvector for t22; equal diagonal with
            // zero coupling is already in either order.
            let (t11, t12, t22) = (self.t[(j, j)], self.t[(j, j + 1)], self.t[(j + 1, j + 1)]);
            let (x, y) = (t12, t22 - t11);
            let r = x.hypot(y);
            if r > 0.0 {
                let g = DMatrix::from_row_slice(2, 2, &[x / r, -y / r, y / r, x / r]);
                self.apply_orthogonal(j, &g);
            }
            self.t[(j + 1, j)] = 0.0;
            self.t[(j + 1, j + 1)] = t11;
            self.t[(j, j)] = t22;
            return Ok(());
        }
        let a11 = self.t.view((j, j), (p, p)).into_owned();
        let a12 = self.t.view((j, j + p), (p, q)).into_owned();
        let a22 = self.t.view((j + p, j + p), (q, q)).into_owned();
        let m = p * q;
        let mut kron = DMatrix::zeros(m, m);
        let mut rhs = nalgebra::DVector::zeros(m);
        for c in 0..q {
            for r in 0..p {
                let row = r + c * p;
                rhs[row] = a12[(r, c)];
                for kk in 0..p {
                    kron[(row, kk + c * p)] += a11[(r, kk)];
                }
                for kk in 0..q {
                    kron[(row, r + kk * p)] -= a22[(kk, c)];
                }
            }
        }
        let x = kron.lu().solve(&rhs).ok_or(SchurError::SwapFailed(k))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SchurError::SwapFailed(k));
        }
        let size = p + q;
        let mut z = DMatrix::zeros(size, q + size);
        for c in 0..q {
            for r in 0..p {
                z[(r, c)] = -x[r + c * p];
            }
            z[(p + c, c)] = 1.0;
        }
        for i in 0..size {
            z[(i, q + i)] = 1.0;
        }
        let g = z.qr().q();
        let before = self.t.view((j, j), (size, size)).norm();
        self.apply_orthogonal(j, &g);
        let lower = self.t.view((j + q, j), (p, q)).norm();
        if lower > 1e3 * f64::EPSILON * before.max(f64::MIN_POSITIVE) {
            return Err(SchurError::SwapFailed(k));
        }
        for r in 0..p {
            for c in 0..q {
                self.t[(j + q + r, j + c)] = 0.0;
            }
        }
        self.blocks[k] = Block { start: j, size: q };
        self.blocks[k + 1] = Block { start: j + q, size: p };
        for b in [self.blocks[k], self.blocks[k + 1]] {
            if b.size == 1 && b.start + 1 < self.dim() {
                self.t[(b.start + 1, b.start)] = 0.0;
            }
        }
        Ok(())
    }

    /// Reorders so that the blocks for which `select` holds come first,
    /// preserving relative order. Returns the dimension of the selected
    /// invariant subspace, spanned by the leading Schur vectors.
    pub fn move_to_front<F>(&mut self, mut select: F) -> Result<usize, SchurError>
    where
        F: FnMut(&[Complex<f64>]) -> bool,
    {
        let flags: Vec<bool> = self.blocks.iter().map(|&b| select(&self.block_eigenvalues(b))).collect();
        self.move_flagged_to_front(&flags)
    }

    pub fn move_flagged_to_front(&mut self, flags: &[bool]) -> Result<usize, SchurError> {
        let mut flags = flags.to_vec();
        let mut front = 0;
        let mut dim = 0;
        for k in 0..flags.len() {
            if !flags[k] {
                continue;
            }
            let mut pos = k;
            while pos > front {
                self.swap_adjacent(pos - 1)?;
                flags.swap(pos - 1, pos);
                pos -= 1;
            }
            dim += self.blocks[front].size;
            front += 1;
        }
        Ok(dim)
    }

    /// Residual of `M Q = Q T` relative to `‖M‖`.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        let r = m * &self.q - &self.q * &self.t;
        r.norm() / m.norm().max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(v: &[Complex<f64>]) -> Vec<f64> {
        let mut r: Vec<f64> = v.iter().map(|c| c.re).collect();
        r.sort_by(f64::total_cmp);
        r
    }

    #[test]
    fn real_blocks_are_split() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        let s = RealSchur::new(&m).unwrap();
        assert!(s.blocks().iter().all(|b| b.size == 1));
        let ev = sorted_re(&s.eigenvalues());
        for (a, b) in ev.iter().zip([-1.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.residual(&m) < 1e-14);
    }

    #[test]
    fn move_complex_pair_to_front() {
        let m = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]);
        let mut s = RealSchur::new(&m).unwrap();
        let d = s.move_to_front(|ev| ev[0].im != 0.0).unwrap();
        assert_eq!(d, 2);
        assert!(s.residual(&m) < 1e-13);
        let d = s.move_to_front(|ev| ev[0].im == 0.0).unwrap();
        assert_eq!(d, 1);
        let v = s.leading_basis(1);
        let expect = nalgebra::DVector::from_vec(vec![1.0, -1.0, 1.0]) / 3f64.sqrt();
        assert!((v.column(0).dot(&expect).abs() - 1.0).abs() < 1e-12);
        assert!(s.residual(&m) < 1e-13);
    }

    #[test]
    fn swaps_keep_similarity() {
        let m = DMatrix::from_row_slice(
            5,
            5,
            &[
                0.3, -1.2, 0.5, 0.1, 2.0, 1.1, 0.4, -0.3, 0.2, 0.0, 0.0, 0.9, -2.0, 1.5, 0.3, 0.7, 0.0, 0.4, 1.0, -0.8,
                0.2, 0.3, 0.0, 1.3, 0.6,
            ],
        );
        let mut s = RealSchur::new(&m).unwrap();
        let before = s.eigenvalues();
        let nb = s.blocks().len();
        for k in (0..nb - 1).rev() {
            s.swap_adjacent(k).unwrap();
        }
        assert!(s.residual(&m) < 1e-12);
        let qtq = s.q().transpose() * s.q();
        assert!((qtq - DMatrix::identity(5, 5)).norm() < 1e-12);
        let mut a: Vec<f64> = before.iter().map(|c| c.norm()).collect();
        let mut b: Vec<f64> = s.eigenvalues().iter().map(|c| c.norm()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
