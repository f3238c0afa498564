//! Cyclic feedback vector fields, class membership checks and the model zoo.

mod expr;
mod spec;
mod zoo;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

pub use expr::{parse_components, ExprError, ExprField};
pub use spec::{ModelSpec, NamedModel};
pub use zoo::{bidirectional_synthetic, goodwin, linear_cyclic, linear_from_matrix, repressilator, SyntheticParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("point {0:?} lies outside the domain")]
    DomainViolation(Vec<f64>),
    #[error("non-finite value at {0:?}")]
    NonFiniteValue(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("compact set K_{0} is empty")]
    EmptyCompactSet(u32),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// c_i = a_{i+1,i} > 0 for i < n and c_n < 0.
    SubdiagonalStrict,
    /// b_i = a_{i,i+1} > 0 for i < n and b_n < 0.
    SuperdiagonalStrict,
}

/// Signs of the n feedback edges. `delta[i]` is the sign of the edge joining
/// coordinates i and i+1 (0-based, cyclic), so the last entry carries the
/// wraparound edge (n-1, 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSignature {
    pub n: usize,
    pub delta: Vec<i8>,
    pub branch: Branch,
}

impl FeedbackSignature {
    pub fn new(delta: Vec<i8>, branch: Branch) -> Result<Self, ModelError> {
        let n = delta.len();
        if n < 3 {
            return Err(ModelError::InvalidParameter(format!("n = {n} < 3")));
        }
        if delta.iter().any(|&d| d != 1 && d != -1) {
            return Err(ModelError::InvalidParameter("delta entries must be +1 or -1".into()));
        }
        if delta.iter().map(|&d| d as i32).product::<i32>() != -1 {
            return Err(ModelError::InvalidParameter("product of delta must be -1".into()));
        }
        Ok(Self { n, delta, branch })
    }

    /// delta = (+1, ..., +1, -1).
    pub fn normalized(n: usize, branch: Branch) -> Self {
        let mut delta = vec![1i8; n];
        delta[n - 1] = -1;
        Self { n, delta, branch }
    }

    /// Diagonal of the sign change `D` with `D A D` in normalized form.
    pub fn normalizing_signs(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.n];
        for i in 1..self.n {
            s[i] = s[i - 1] * self.delta[i - 1] as f64;
        }
        s
    }

    pub fn is_normalized(&self) -> bool {
        self.delta[..self.n - 1].iter().all(|&d| d == 1) && self.delta[self.n - 1] == -1
    }
}

/// Axis-aligned open box, each side may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn whole(n: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; n], hi: vec![f64::INFINITY; n] }
    }

    pub fn positive_orthant(n: usize) -> Self {
        Self { lo: vec![0.0; n], hi: vec![f64::INFINITY; n] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v > *l && *v < *h)
    }

    /// Distance from an interior point to the complement.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| (v - l).min(h - v)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    Analytic,
    CentralDifference(f64),
}

/// Component functions of a field. Implementations must be pure.
pub trait Rhs: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Writes the analytic Jacobian; returns false when none is available.
    fn jacobian(&self, _x: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct CyclicVectorField {
    name: String,
    rhs: Arc<dyn Rhs>,
    jacobian_mode: JacobianMode,
    domain: DomainBox,
    signature: FeedbackSignature,
    descriptor: serde_json::Value,
}

impl fmt::Debug for CyclicVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CyclicVectorField")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("jacobian_mode", &self.jacobian_mode)
            .finish()
    }
}

impl CyclicVectorField {
    pub fn new(
        name: impl Into<String>,
        rhs: Arc<dyn Rhs>,
        jacobian_mode: JacobianMode,
        domain: DomainBox,
        signature: FeedbackSignature,
    ) -> Result<Self, ModelError> {
        let n = rhs.dim();
        if n < 3 {
            return Err(ModelError::InvalidParameter(format!("n = {n} < 3")));
        }
        if domain.lo.len() != n || domain.hi.len() != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: domain.lo.len() });
        }
        if signature.n != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: signature.n });
        }
        if let JacobianMode::CentralDifference(h) = jacobian_mode {
            if !(h > 0.0) {
                return Err(ModelError::InvalidParameter("difference step must be positive".into()));
            }
        }
        let name = name.into();
        let descriptor = serde_json::json!({ "name": name });
        Ok(Self { name, rhs, jacobian_mode, domain, signature, descriptor })
    }

    pub fn with_descriptor(mut self, descriptor: serde_json::Value) -> Self {
        self.descriptor = descriptor;
        self
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.rhs.dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn signature(&self) -> &FeedbackSignature {
        &self.signature
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    /// JSON description used for hashing and reports.
    pub fn descriptor(&self) -> &serde_json::Value {
        &self.descriptor
    }

    pub fn rhs(&self) -> &Arc<dyn Rhs> {
        &self.rhs
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n() {
            return Err(ModelError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        if !self.domain.contains(x) {
            return Err(ModelError::DomainViolation(x.to_vec()));
        }
        Ok(())
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.check_point(x)?;
        self.rhs.eval(x, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue(x.to_vec()));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        let mut out = DVector::zeros(self.n());
        self.evaluate_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let mut jac = DMatrix::zeros(self.n(), self.n());
        self.jacobian_into(x, &mut jac)?;
        Ok(jac)
    }

    pub fn jacobian_into(&self, x: &[f64], jac: &mut DMatrix<f64>) -> Result<(), ModelError> {
        self.check_point(x)?;
        let analytic = match self.jacobian_mode {
            JacobianMode::Analytic => self.rhs.jacobian(x, jac),
            JacobianMode::CentralDifference(_) => false,
        };
        if !analytic {
            let step = match self.jacobian_mode {
                JacobianMode::CentralDifference(h) => h,
                JacobianMode::Analytic => 1e-6,
            };
            self.difference_jacobian(x, step, jac);
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue(x.to_vec()));
        }
        Ok(())
    }

    fn difference_jacobian(&self, x: &[f64], step: f64, jac: &mut DMatrix<f64>) {
        let n = self.n();
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = step * x[j].abs().max(1.0);
            let (lo, hi) = (x[j] - h, x[j] + h);
            xp[j] = hi;
            let up_ok = self.domain.contains(&xp);
            xp[j] = lo;
            let down_ok = self.domain.contains(&xp);
            let (a, b) = match (up_ok, down_ok) {
                (true, true) => (hi, lo),
                (true, false) => (hi, x[j]),
                (false, true) => (x[j], lo),
                (false, false) => (x[j], x[j]),
            };
            xp[j] = a;
            self.rhs.eval(&xp, &mut fp);
            xp[j] = b;
            self.rhs.eval(&xp, &mut fm);
            xp[j] = x[j];
            let width = a - b;
            for i in 0..n {
                jac[(i, j)] = if width > 0.0 { (fp[i] - fm[i]) / width } else { f64::NAN };
            }
        }
    }

    /// `self + eps * g` on the intersection of the domains.
    pub fn add_scaled(&self, eps: f64, g: &CyclicVectorField) -> Result<CyclicVectorField, ModelError> {
        if g.n() != self.n() {
            return Err(ModelError::DimensionMismatch { expected: self.n(), got: g.n() });
        }
        let domain = DomainBox {
            lo: self.domain.lo.iter().zip(&g.domain.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.domain.hi.iter().zip(&g.domain.hi).map(|(a, b)| a.min(*b)).collect(),
        };
        let rhs = Arc::new(SumRhs { f: self.rhs.clone(), g: g.rhs.clone(), eps });
        let mode = match (self.jacobian_mode, g.jacobian_mode) {
            (JacobianMode::Analytic, JacobianMode::Analytic) => JacobianMode::Analytic,
            (JacobianMode::CentralDifference(h), _) | (_, JacobianMode::CentralDifference(h)) => {
                JacobianMode::CentralDifference(h)
            }
        };
        let descriptor = serde_json::json!({ "sum": [self.descriptor, g.descriptor], "eps": eps });
        Ok(CyclicVectorField::new(
            format!("{}+{}*{}", self.name, eps, g.name),
            rhs,
            mode,
            domain,
            self.signature.clone(),
        )?
        .with_descriptor(descriptor))
    }

    /// `self + lambda + alpha (x - e)`.
    pub fn affine_shift(&self, lambda: &[f64], alpha: f64, e: &[f64]) -> Result<CyclicVectorField, ModelError> {
        let n = self.n();
        if lambda.len() != n || e.len() != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: lambda.len().min(e.len()) });
        }
        let rhs = Arc::new(AffineShiftRhs { f: self.rhs.clone(), lambda: lambda.to_vec(), alpha, e: e.to_vec() });
        let descriptor = serde_json::json!({ "base": self.descriptor, "lambda": lambda, "alpha": alpha, "e": e });
        Ok(CyclicVectorField::new(
            format!("{}~shift", self.name),
            rhs,
            self.jacobian_mode,
            self.domain.clone(),
            self.signature.clone(),
        )?
        .with_descriptor(descriptor))
    }
}

struct SumRhs {
    f: Arc<dyn Rhs>,
    g: Arc<dyn Rhs>,
    eps: f64,
}

impl Rhs for SumRhs {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.f.eval(x, out);
        let mut tmp = vec![0.0; out.len()];
        self.g.eval(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(tmp) {
            *o += self.eps * t;
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let mut other = DMatrix::zeros(jac.nrows(), jac.ncols());
        if !self.f.jacobian(x, jac) || !self.g.jacobian(x, &mut other) {
            return false;
        }
        *jac += other * self.eps;
        true
    }
}

struct AffineShiftRhs {
    f: Arc<dyn Rhs>,
    lambda: Vec<f64>,
    alpha: f64,
    e: Vec<f64>,
}

impl Rhs for AffineShiftRhs {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.f.eval(x, out);
        for i in 0..out.len() {
            out[i] += self.lambda[i] + self.alpha * (x[i] - self.e[i]);
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        if !self.f.jacobian(x, jac) {
            return false;
        }
        for i in 0..jac.nrows() {
            jac[(i, i)] += self.alpha;
        }
        true
    }
}

/// Field given by a closure, with an optional analytic Jacobian.
pub struct ClosureRhs<F, J> {
    pub n: usize,
    pub f: F,
    pub jac: Option<J>,
}

impl<F, J> Rhs for ClosureRhs<F, J>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    J: Fn(&[f64], &mut DMatrix<f64>) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        match &self.jac {
            Some(j) => {
                j(x, jac);
                true
            }
            None => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Class checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MminusCheck {
    pub ok: bool,
    pub branch: Option<Branch>,
    pub reason: Option<String>,
}

impl MminusCheck {
    fn fail(reason: String) -> Self {
        Self { ok: false, branch: None, reason: Some(reason) }
    }
}

pub fn in_cyclic_pattern(n: usize, i: usize, j: usize) -> bool {
    i == j || (i + 1) % n == j || (j + 1) % n == i
}

/// Membership of `A` in the sign-pattern class, read after the sign change
/// that normalizes `signature`.
pub fn check_mminus(a: &DMatrix<f64>, signature: &FeedbackSignature, zero_tol: f64) -> Result<MminusCheck, ModelError> {
    let n = signature.n;
    if a.nrows() != n || a.ncols() != n {
        return Err(ModelError::DimensionMismatch { expected: n, got: a.nrows() });
    }
    let s = signature.normalizing_signs();
    let m = DMatrix::from_fn(n, n, |i, j| s[i] * a[(i, j)] * s[j]);
    for i in 0..n {
        for j in 0..n {
            if !in_cyclic_pattern(n, i, j) && m[(i, j)].abs() > zero_tol {
                return Ok(MminusCheck::fail(format!("entry ({}, {}) outside the cyclic pattern", i + 1, j + 1)));
            }
        }
    }
    let b: Vec<f64> = (0..n).map(|i| m[(i, (i + 1) % n)]).collect();
    let c: Vec<f64> = (0..n).map(|i| m[((i + 1) % n, i)]).collect();
    for i in 0..n {
        if b[i] * c[i] < -zero_tol {
            return Ok(MminusCheck::fail(format!("b_{0} c_{0} < 0", i + 1)));
        }
    }
    let pb: f64 = b.iter().product();
    let pc: f64 = c.iter().product();
    if (pb + pc).abs() <= zero_tol {
        return Ok(MminusCheck::fail("prod b + prod c = 0".into()));
    }
    let strict = |v: &[f64]| v[..n - 1].iter().all(|&x| x > zero_tol) && v[n - 1] < -zero_tol;
    let branch = if strict(&c) {
        Some(Branch::SubdiagonalStrict)
    } else if strict(&b) {
        Some(Branch::SuperdiagonalStrict)
    } else {
        None
    };
    Ok(match branch {
        Some(br) => MminusCheck { ok: true, branch: Some(br), reason: None },
        None => MminusCheck::fail("neither strict sign branch holds".into()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSpec {
    Grid { lo: Vec<f64>, hi: Vec<f64>, per_axis: usize },
    Random { lo: Vec<f64>, hi: Vec<f64>, count: usize, seed: u64 },
    Points(Vec<Vec<f64>>),
}

impl SampleSpec {
    /// Random points in the domain, clipped to `[-scale, scale]` per axis.
    pub fn random_in_domain(domain: &DomainBox, scale: f64, count: usize, seed: u64) -> Self {
        let lo = domain.lo.iter().map(|l| l.max(-scale)).collect();
        let hi = domain.hi.iter().map(|h| h.min(scale)).collect();
        SampleSpec::Random { lo, hi, count, seed }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            SampleSpec::Grid { lo, hi, per_axis } => grid_points(lo, hi, *per_axis),
            SampleSpec::Random { lo, hi, count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| lo.iter().zip(hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect())
                    .collect()
            }
            SampleSpec::Points(p) => p.clone(),
        }
    }
}

/// Cell-centred grid with `per_axis` points along each axis.
pub fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    if per_axis == 0 || lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
        return Vec::new();
    }
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|i| {
                    let idx = k % per_axis;
                    k /= per_axis;
                    lo[i] + (hi[i] - lo[i]) * (idx as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityRecord {
    pub radius: f64,
    pub samples: usize,
    pub evaluated: usize,
    pub witness_violations: usize,
    pub skipped_outside_domain: usize,
    /// min of -<f(x), x>/|x| over evaluated points.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub in_c1bf: bool,
    pub in_mminus_samples: f64,
    pub in_lminus: bool,
    pub dissipative: Option<DissipativityRecord>,
    pub failures: Vec<(Vec<f64>, String)>,
    pub samples: usize,
    /// Always "sampled": class membership is checked on finitely many points.
    pub evidence: String,
}

pub fn default_zero_tol(mode: JacobianMode) -> f64 {
    match mode {
        JacobianMode::Analytic => 1e-10,
        JacobianMode::CentralDifference(_) => 1e-6,
    }
}

pub fn check_class(field: &CyclicVectorField, samples: &SampleSpec) -> ClassReport {
    check_class_with_tol(field, samples, default_zero_tol(field.jacobian_mode()))
}

pub fn check_class_with_tol(field: &CyclicVectorField, samples: &SampleSpec, zero_tol: f64) -> ClassReport {
    let n = field.n();
    let pts = samples.points();
    let mut failures = Vec::new();
    let mut passed = 0usize;
    let mut pattern_ok = true;
    for p in &pts {
        let jac = match field.jacobian(p) {
            Ok(j) => j,
            Err(e) => {
                failures.push((p.clone(), e.to_string()));
                continue;
            }
        };
        let s = field.signature().normalizing_signs();
        for i in 0..n {
            for j in 0..n {
                if !in_cyclic_pattern(n, i, j) && (s[i] * jac[(i, j)] * s[j]).abs() > zero_tol {
                    pattern_ok = false;
                }
            }
        }
        match check_mminus(&jac, field.signature(), zero_tol) {
            Ok(c) if c.ok => passed += 1,
            Ok(c) => failures.push((p.clone(), c.reason.unwrap_or_default())),
            Err(e) => failures.push((p.clone(), e.to_string())),
        }
    }
    let frac = if pts.is_empty() { 0.0 } else { passed as f64 / pts.len() as f64 };
    ClassReport {
        in_c1bf: pattern_ok,
        in_mminus_samples: frac,
        in_lminus: !pts.is_empty() && passed == pts.len(),
        dissipative: None,
        failures,
        samples: pts.len(),
        evidence: "sampled".into(),
    }
}

pub fn check_dissipative(field: &CyclicVectorField, radius: f64, samples: usize, seed: u64) -> DissipativityRecord {
    let n = field.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = DissipativityRecord {
        radius,
        samples,
        evaluated: 0,
        witness_violations: 0,
        skipped_outside_domain: 0,
        margin: f64::INFINITY,
    };
    for k in 0..samples {
        let r = if k % 2 == 0 { radius } else { 2.0 * radius };
        let mut u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = linalg::norm(&u);
        u.iter_mut().for_each(|v| *v *= r / len);
        match field.evaluate(&u) {
            Ok(f) => {
                rec.evaluated += 1;
                let ip = linalg::dot(f.as_slice(), &u);
                if ip >= 0.0 {
                    rec.witness_violations += 1;
                }
                rec.margin = rec.margin.min(-ip / r);
            }
            Err(_) => rec.skipped_outside_domain += 1,
        }
    }
    rec
}

/// Grid lower bound of `sup_{K_m} |f - g| + |Df - Dg|` with
/// `K_m = {|x| <= m} ∩ {dist(x, complement of the domain) >= 1/m}`.
pub fn seminorm_pm(f: &CyclicVectorField, g: &CyclicVectorField, m: u32, per_axis: usize) -> Result<f64, ModelError> {
    if f.n() != g.n() {
        return Err(ModelError::DimensionMismatch { expected: f.n(), got: g.n() });
    }
    let mf = m as f64;
    let pts = compact_set_grid(f.domain(), mf, per_axis);
    if pts.is_empty() {
        return Err(ModelError::EmptyCompactSet(m));
    }
    let mut best = 0.0f64;
    for p in &pts {
        let dv = f.evaluate(p)? - g.evaluate(p)?;
        let dj = f.jacobian(p)? - g.jacobian(p)?;
        best = best.max(dv.norm() + linalg::spectral_norm(&dj));
    }
    Ok(best)
}

fn compact_set_grid(domain: &DomainBox, m: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let lo: Vec<f64> = domain.lo.iter().map(|l| (l + 1.0 / m).max(-m)).collect();
    let hi: Vec<f64> = domain.hi.iter().map(|h| (h - 1.0 / m).min(m)).collect();
    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Vec::new();
    }
    let mut pts: Vec<Vec<f64>> =
        if lo.iter().zip(&hi).all(|(l, h)| l == h) { vec![lo.clone()] } else { grid_points(&lo, &hi, per_axis.max(1)) };
    pts.retain(|p| linalg::norm(p) <= m && domain.boundary_distance(p) >= 1.0 / m);
    pts
}

/// Truncated metric `sum_{k <= k_max} 2^-k p_k / (1 + p_k)`, skipping empty
/// compact sets.
pub fn metric_d(f: &CyclicVectorField, g: &CyclicVectorField, k_max: u32, per_axis: usize) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for k in 1..=k_max {
        match seminorm_pm(f, g, k, per_axis) {
            Ok(p) => total += 0.5f64.powi(k as i32) * p / (1.0 + p),
            Err(ModelError::EmptyCompactSet(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m3(v: [f64; 9]) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &v)
    }

    #[test]
    fn mminus_examples() {
        let sig = FeedbackSignature::normalized(3, Branch::SubdiagonalStrict);
        let a = m3([-1.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]);
        let r = check_mminus(&a, &sig, 0.0).unwrap();
        assert!(r.ok);
        assert_eq!(r.branch, Some(Branch::SubdiagonalStrict));

        let mut bad = a.clone();
        bad[(0, 1)] = 1.0;
        bad[(1, 0)] = -1.0;
        let r = check_mminus(&bad, &sig, 0.0).unwrap();
        assert!(!r.ok);
        assert_eq!(r.reason.as_deref(), Some("b_1 c_1 < 0"));

        let diag = DMatrix::from_diagonal_element(3, 3, -1.0);
        let r = check_mminus(&diag, &sig, 0.0).unwrap();
        assert_eq!(r.reason.as_deref(), Some("prod b + prod c = 0"));

        assert!(matches!(check_mminus(&DMatrix::zeros(4, 4), &sig, 0.0), Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn signature_requires_negative_product() {
        assert!(FeedbackSignature::new(vec![1, 1, 1], Branch::SubdiagonalStrict).is_err());
        let sig = FeedbackSignature::new(vec![1, -1, 1, -1, 1, -1], Branch::SubdiagonalStrict).unwrap();
        assert_eq!(sig.normalizing_signs(), vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn grid_is_cell_centred() {
        let g = grid_points(&[0.0, 0.0], &[1.0, 2.0], 2);
        assert_eq!(g.len(), 4);
        assert!(g.contains(&vec![0.25, 0.5]));
        assert!(g.contains(&vec![0.75, 1.5]));
        assert!(grid_points(&[0.0], &[0.0], 3).is_empty());
    }
}
