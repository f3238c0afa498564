//! Small dense helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin QR with the diagonal of R made non-negative, so the factorization is
/// unique for full column rank input.
pub fn qr_thin(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (DMatrix::zeros(rows, 0), DMatrix::zeros(0, 0));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    qr_thin(m).0
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `q`.
pub fn orth_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let k = q.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::identity(n, n) - q * q.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let cols: Vec<DVector<f64>> = idx[..n - k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    orthonormalize(&DMatrix::from_columns(&cols))
}

/// Principal angles (ascending, radians) between the column spans of two
/// orthonormal matrices. Computed from sines, which keeps small angles
/// accurate.
pub fn principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    let (big, small) = if q1.ncols() >= q2.ncols() { (q1, q2) } else { (q2, q1) };
    if small.ncols() == 0 {
        return Vec::new();
    }
    let resid = small - big * (big.transpose() * small);
    let mut s: Vec<f64> = resid.svd(false, false).singular_values.iter().map(|v| v.clamp(0.0, 1.0).asin()).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Spectral-norm distance between the orthogonal projectors onto two spans.
pub fn subspace_distance(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    let p1 = q1 * q1.transpose();
    let p2 = q2 * q2.transpose();
    spectral_norm(&(p1 - p2))
}

/// Projection onto span(u) along span(s). Requires [u | s] to be square and
/// invertible.
pub fn oblique_projection(u: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = u.nrows();
    if u.ncols() + s.ncols() != n {
        return None;
    }
    if u.ncols() == 0 {
        return Some(DMatrix::zeros(n, n));
    }
    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, u.ncols()).copy_from(u);
    basis.columns_mut(u.ncols(), s.ncols()).copy_from(s);
    let inv = basis.clone().try_inverse()?;
    let mut sel = DMatrix::zeros(n, n);
    for i in 0..u.ncols() {
        sel[(i, i)] = 1.0;
    }
    Some(&basis * sel * inv)
}

pub fn orthogonal_projection(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Serializes complex vectors as `[re, im]` pairs.
pub mod complex_vec {
    use nalgebra::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex<f64>], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex<f64>>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
    }
}

/// Serializes matrices as row-major nested vectors.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_of_coordinate_plane() {
        let q = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = orth_complement(&q);
        assert_eq!(c.ncols(), 1);
        assert!((c[(2, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angles_between_planes() {
        let q1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = 0.3f64;
        let q2 = DMatrix::from_column_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        let a = principal_angles(&q1, &q2);
        assert!((a[0] - t).abs() < 1e-12);
        let tiny = 1e-9f64;
        let q3 = DMatrix::from_column_slice(3, 1, &[tiny.cos(), tiny.sin(), 0.0]);
        assert!((principal_angles(&q1, &q3)[0] - tiny).abs() < 1e-15);
    }

    #[test]
    fn oblique_projection_is_idempotent() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let p = oblique_projection(&u, &s).unwrap();
        assert!((&p * &p - &p).norm() < 1e-14);
        assert!((&p * &s).norm() < 1e-14);
        assert!((&p * &u - &u).norm() < 1e-14);
    }
}
