use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Branch, CyclicVectorField, DomainBox, FeedbackSignature, JacobianMode, ModelError, Rhs};

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter(msg.into())
}

struct LinearRhs {
    a: DMatrix<f64>,
}

impl Rhs for LinearRhs {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }

    fn jacobian(&self, _x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        jac.copy_from(&self.a);
        true
    }
}

/// `x' = (a I + c P) x` where `P` shifts coordinate i to i+1 and the
/// wraparound entry is negated.
pub fn linear_cyclic(n: usize, c: f64, a: f64) -> Result<CyclicVectorField, ModelError> {
    if n < 3 {
        return Err(invalid(format!("n = {n} < 3")));
    }
    if !(c > 0.0) || !a.is_finite() || !c.is_finite() {
        return Err(invalid("linear_cyclic needs c > 0 and finite a"));
    }
    let mut m = DMatrix::from_diagonal_element(n, n, a);
    for i in 0..n - 1 {
        m[(i + 1, i)] = c;
    }
    m[(0, n - 1)] = -c;
    CyclicVectorField::new(
        format!("linear_cyclic(n={n},c={c},a={a})"),
        Arc::new(LinearRhs { a: m }),
        JacobianMode::Analytic,
        DomainBox::whole(n),
        FeedbackSignature::normalized(n, Branch::SubdiagonalStrict),
    )
    .map(|f| f.with_descriptor(serde_json::json!({"name": "linear_cyclic", "params": {"n": n, "c": c, "a": a}})))
}

/// Field `x' = A x` for an arbitrary matrix; used for property tests on
/// random pattern matrices.
pub fn linear_from_matrix(a: DMatrix<f64>, signature: FeedbackSignature) -> Result<CyclicVectorField, ModelError> {
    let n = a.nrows();
    CyclicVectorField::new("linear", Arc::new(LinearRhs { a }), JacobianMode::Analytic, DomainBox::whole(n), signature)
}

struct GoodwinRhs {
    p: f64,
    b: f64,
}

impl Rhs for GoodwinRhs {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 / (1.0 + x[2].powf(self.p)) - self.b * x[0];
        out[1] = x[0] - self.b * x[1];
        out[2] = x[1] - self.b * x[2];
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let b = self.b;
        let q = 1.0 + x[2].powf(self.p);
        jac.fill(0.0);
        jac[(0, 0)] = -b;
        jac[(0, 2)] = -self.p * x[2].powf(self.p - 1.0) / (q * q);
        jac[(1, 0)] = 1.0;
        jac[(1, 1)] = -b;
        jac[(2, 1)] = 1.0;
        jac[(2, 2)] = -b;
        true
    }
}

pub fn goodwin(p: f64, b: f64) -> Result<CyclicVectorField, ModelError> {
    if !(p >= 1.0) || !(b > 0.0) || !p.is_finite() || !b.is_finite() {
        return Err(invalid("goodwin needs p >= 1 and b > 0"));
    }
    CyclicVectorField::new(
        format!("goodwin(p={p},b={b})"),
        Arc::new(GoodwinRhs { p, b }),
        JacobianMode::Analytic,
        DomainBox::positive_orthant(3),
        FeedbackSignature::normalized(3, Branch::SubdiagonalStrict),
    )
    .map(|f| f.with_descriptor(serde_json::json!({"name": "goodwin", "params": {"p": p, "b": b}})))
}

/// Three-gene loop ordered (m1, p1, m2, p2, m3, p3):
/// `m_k' = alpha / (1 + p_{k-1}^h) - m_k`, `p_k' = beta (m_k - p_k)`.
struct RepressilatorRhs {
    alpha: f64,
    beta: f64,
    h: f64,
}

impl Rhs for RepressilatorRhs {
    fn dim(&self) -> usize {
        6
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..3 {
            let m = 2 * k;
            let rep = x[(m + 5) % 6];
            out[m] = self.alpha / (1.0 + rep.powf(self.h)) - x[m];
            out[m + 1] = self.beta * (x[m] - x[m + 1]);
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        jac.fill(0.0);
        for k in 0..3 {
            let m = 2 * k;
            let r = (m + 5) % 6;
            let q = 1.0 + x[r].powf(self.h);
            jac[(m, m)] = -1.0;
            jac[(m, r)] = -self.alpha * self.h * x[r].powf(self.h - 1.0) / (q * q);
            jac[(m + 1, m)] = self.beta;
            jac[(m + 1, m + 1)] = -self.beta;
        }
        true
    }
}

pub fn repressilator(alpha: f64, beta: f64, h: f64) -> Result<CyclicVectorField, ModelError> {
    if !(alpha > 0.0) || !(beta > 0.0) || !(h >= 1.0) || !alpha.is_finite() || !beta.is_finite() || !h.is_finite() {
        return Err(invalid("repressilator needs alpha > 0, beta > 0, p >= 1"));
    }
    let sig = FeedbackSignature::new(vec![1, -1, 1, -1, 1, -1], Branch::SubdiagonalStrict)?;
    CyclicVectorField::new(
        format!("repressilator(alpha={alpha},beta={beta},p={h})"),
        Arc::new(RepressilatorRhs { alpha, beta, h }),
        JacobianMode::Analytic,
        DomainBox::positive_orthant(6),
        sig,
    )
    .map(|f| {
        f.with_descriptor(
            serde_json::json!({"name": "repressilator", "params": {"alpha": alpha, "beta": beta, "p": h}}),
        )
    })
}

/// `f_i = mu_i x_i - x_i^3 + sup_i x_{i+1} + sub_{i-1} x_{i-1}`, so that
/// `b_i = sup_i` and `c_i = sub_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub mu: Vec<f64>,
    pub sub: Vec<f64>,
    pub sup: Vec<f64>,
}

impl SyntheticParams {
    /// Weakly coupled n = 3 instance with 27 hyperbolic equilibria of
    /// indices 0 to 3.
    pub fn bistable3() -> Self {
        Self { mu: vec![1.0, 1.1, 0.9], sub: vec![0.2, 0.15, -0.25], sup: vec![0.1, 0.12, -0.08] }
    }
}

struct SyntheticRhs {
    p: SyntheticParams,
}

impl Rhs for SyntheticRhs {
    fn dim(&self) -> usize {
        self.p.mu.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let next = (i + 1) % n;
            let prev = (i + n - 1) % n;
            out[i] = self.p.mu[i] * x[i] - x[i].powi(3) + self.p.sup[i] * x[next] + self.p.sub[prev] * x[prev];
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let n = self.dim();
        jac.fill(0.0);
        for i in 0..n {
            jac[(i, i)] = self.p.mu[i] - 3.0 * x[i] * x[i];
            jac[(i, (i + 1) % n)] = self.p.sup[i];
            jac[(i, (i + n - 1) % n)] = self.p.sub[(i + n - 1) % n];
        }
        true
    }
}

pub fn bidirectional_synthetic(n: usize, params: SyntheticParams) -> Result<CyclicVectorField, ModelError> {
    if n < 3 {
        return Err(invalid(format!("n = {n} < 3")));
    }
    if params.mu.len() != n || params.sub.len() != n || params.sup.len() != n {
        return Err(invalid("mu, sub and sup must have length n"));
    }
    for i in 0..n {
        let (b, c) = (params.sup[i], params.sub[i]);
        if !(b.is_finite() && c.is_finite() && params.mu[i].is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        if b * c < 0.0 {
            return Err(invalid(format!("b_{0} c_{0} < 0", i + 1)));
        }
        let ok = if i + 1 < n { b > 0.0 && c > 0.0 } else { b < 0.0 && c < 0.0 };
        if !ok {
            return Err(invalid(format!("coupling {} has the wrong sign", i + 1)));
        }
    }
    let desc = serde_json::json!({"name": "bidirectional_synthetic", "params": {"n": n, "mu": params.mu, "sub": params.sub, "sup": params.sup}});
    CyclicVectorField::new(
        format!("bidirectional_synthetic(n={n})"),
        Arc::new(SyntheticRhs { p: params }),
        JacobianMode::Analytic,
        DomainBox::whole(n),
        FeedbackSignature::normalized(n, Branch::SubdiagonalStrict),
    )
    .map(|f| f.with_descriptor(desc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matrix() {
        let f = linear_cyclic(3, 1.0, -1.0).unwrap();
        let j = f.jacobian(&[0.3, -2.0, 5.0]).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]);
        assert_eq!(j, expect);
        assert_eq!(f.evaluate(&[0.0, 0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn goodwin_values() {
        let f = goodwin(2.0, 1.0).unwrap();
        assert_eq!(f.evaluate(&[1.0, 1.0, 1.0]).unwrap().as_slice(), &[-0.5, 0.0, 0.0]);
        assert_eq!(f.jacobian(&[1.0, 1.0, 1.0]).unwrap()[(0, 2)], -0.5);
        assert!(matches!(f.evaluate(&[1.0, -1.0, 1.0]), Err(ModelError::DomainViolation(_))));
        assert!(goodwin(0.5, 1.0).is_err());
    }

    #[test]
    fn synthetic_rejects_mixed_signs() {
        let mut p = SyntheticParams::bistable3();
        p.sub[0] = -0.2;
        assert!(matches!(bidirectional_synthetic(3, p), Err(ModelError::InvalidParameter(_))));
    }
}
