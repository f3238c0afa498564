//! Dormand-Prince 5(4) integration of the flow, the variational flow and
//! the adjoint flow, with dense output and section crossings.

use std::io;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CyclicVectorField, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub dense_output: bool,
    /// Integration stops with BlowUp once the state norm exceeds this.
    pub blowup_bound: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            initial_step: 1e-3,
            max_step: 0.5,
            max_steps: 2_000_000,
            dense_output: true,
            blowup_bound: 1e8,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        let ok = self.rel_tol > 0.0
            && self.rel_tol < 1.0
            && self.abs_tol > 0.0
            && self.abs_tol < 1.0
            && self.initial_step > 0.0
            && self.max_step > 0.0
            && self.max_steps > 0
            && self.blowup_bound > 0.0;
        if ok {
            Ok(())
        } else {
            Err(IntegrateError::InvalidConfig(format!("{self:?}")))
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn without_dense(mut self) -> Self {
        self.dense_output = false;
        self
    }
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("state norm exceeded the blow-up bound at t = {time}")]
    BlowUp { time: f64, trajectory: Box<Trajectory> },
    #[error("trajectory left the domain at t = {time}")]
    LeftDomain { time: f64, trajectory: Box<Trajectory> },
    #[error("step limit reached at t = {time}")]
    MaxStepsExceeded { time: f64, trajectory: Box<Trajectory> },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid initial condition: {0}")]
    InvalidInitial(String),
    #[error("base trajectory does not cover t = {0}")]
    OutsideBase(f64),
}

impl IntegrateError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::BlowUp { trajectory, .. }
            | IntegrateError::LeftDomain { trajectory, .. }
            | IntegrateError::MaxStepsExceeded { trajectory, .. } => Some(trajectory),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            IntegrateError::BlowUp { .. } => "BlowUp",
            IntegrateError::LeftDomain { .. } => "LeftDomain",
            IntegrateError::MaxStepsExceeded { .. } => "MaxStepsExceeded",
            IntegrateError::InvalidConfig(_) => "InvalidConfig",
            IntegrateError::InvalidInitial(_) => "InvalidInitial",
            IntegrateError::OutsideBase(_) => "OutsideBase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsFailure {
    OutOfDomain,
    NonFinite,
}

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure>;
    /// Norm compared against the blow-up bound.
    fn monitor_norm(&self, y: &[f64]) -> f64 {
        y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Autonomous system `y' = f(y)` given by a closure, for test harnesses.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        (self.f)(y, dy);
        if dy.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(RhsFailure::NonFinite)
        }
    }
}

fn map_model_err(e: ModelError) -> RhsFailure {
    match e {
        ModelError::DomainViolation(_) => RhsFailure::OutOfDomain,
        _ => RhsFailure::NonFinite,
    }
}

impl OdeSystem for CyclicVectorField {
    fn dim(&self) -> usize {
        self.n()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        self.evaluate_into(y, dy).map_err(map_model_err)
    }
}

/// Base state together with the column-major fundamental matrix.
pub struct VariationalSystem<'a> {
    pub field: &'a CyclicVectorField,
}

impl OdeSystem for VariationalSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.field.n();
        n + n * n
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        let n = self.field.n();
        let x = &y[..n];
        self.field.evaluate_into(x, &mut dy[..n]).map_err(map_model_err)?;
        let jac = self.field.jacobian(x).map_err(map_model_err)?;
        let phi = DMatrix::from_column_slice(n, n, &y[n..]);
        let dphi = jac * phi;
        dy[n..].copy_from_slice(dphi.as_slice());
        Ok(())
    }

    fn monitor_norm(&self, y: &[f64]) -> f64 {
        let n = self.field.n();
        y[..n].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `Psi' = -Df(x(t))^T Psi` along a stored base trajectory.
struct AdjointSystem<'a> {
    field: &'a CyclicVectorField,
    base: &'a Trajectory,
}

impl OdeSystem for AdjointSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.field.n();
        n * n
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        let n = self.field.n();
        let x = self.base.interpolate(t).ok_or(RhsFailure::OutOfDomain)?;
        let jac = self.field.jacobian(&x).map_err(map_model_err)?;
        let psi = DMatrix::from_column_slice(n, n, y);
        let d = -(jac.transpose() * psi);
        dy.copy_from_slice(d.as_slice());
        Ok(())
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    fn lo(&self) -> f64 {
        self.t0.min(self.t0 + self.h)
    }

    fn hi(&self) -> f64 {
        self.t0.max(self.t0 + self.h)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let r = &self.r;
        (0..r[0].len()).map(|i| r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))).collect()
    }
}

/// Samples of a solution in increasing time order, regardless of the
/// direction of integration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// +1 forward, -1 backward.
    pub direction: i8,
    #[serde(skip)]
    dense: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn from_samples(times: Vec<f64>, states: Vec<Vec<f64>>) -> Self {
        Self { times, states, accepted_steps: 0, rejected_steps: 0, direction: 1, dense: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_dense(&self) -> bool {
        !self.dense.is_empty()
    }

    /// State at the initial time of the integration.
    pub fn initial_state(&self) -> &[f64] {
        if self.direction >= 0 {
            &self.states[0]
        } else {
            self.states.last().expect("empty trajectory")
        }
    }

    /// State at the final time of the integration.
    pub fn final_state(&self) -> &[f64] {
        if self.direction >= 0 {
            self.states.last().expect("empty trajectory")
        } else {
            &self.states[0]
        }
    }

    pub fn final_time(&self) -> f64 {
        if self.direction >= 0 {
            *self.times.last().expect("empty trajectory")
        } else {
            self.times[0]
        }
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    /// Dense interpolation; falls back to linear interpolation between
    /// stored samples when no dense output was kept.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        if self.times.is_empty() {
            return None;
        }
        let (lo, hi) = (self.t_min(), self.t_max());
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if t < lo - slack || t > hi + slack {
            return None;
        }
        if self.times.len() == 1 {
            return Some(self.states[0].clone());
        }
        let t = t.clamp(lo, hi);
        if !self.dense.is_empty() {
            let k = self.dense.partition_point(|s| s.hi() < t).min(self.dense.len() - 1);
            let seg = &self.dense[k];
            if t >= seg.lo() - slack && t <= seg.hi() + slack {
                return Some(seg.eval(t));
            }
        }
        let k = self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        Some(self.states[k - 1].iter().zip(&self.states[k]).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// Shifts all times by `dt`.
    pub fn shift_time(&mut self, dt: f64) {
        for t in &mut self.times {
            *t += dt;
        }
        for s in &mut self.dense {
            s.t0 += dt;
        }
    }

    /// Uniform resampling on `[t_min, t_max]` with `count` points.
    pub fn resample(&self, count: usize) -> Trajectory {
        let (a, b) = (self.t_min(), self.t_max());
        let times: Vec<f64> =
            (0..count).map(|k| if count == 1 { a } else { a + (b - a) * k as f64 / (count - 1) as f64 }).collect();
        let states = times.iter().map(|&t| self.interpolate(t).expect("inside range")).collect();
        let mut out = Trajectory::from_samples(times, states);
        out.direction = self.direction;
        out.dense = self.dense.clone();
        out
    }

    /// Samples at the given times, keeping the dense output.
    pub fn sample_at(&self, times: &[f64]) -> Option<Trajectory> {
        let states = times.iter().map(|&t| self.interpolate(t)).collect::<Option<Vec<_>>>()?;
        let mut out = Trajectory::from_samples(times.to_vec(), states);
        out.direction = self.direction;
        out.dense = self.dense.clone();
        Some(out)
    }

    /// Part of the trajectory on `[a, b]`, with interpolated end points.
    pub fn restrict(&self, a: f64, b: f64) -> Option<Trajectory> {
        let xa = self.interpolate(a)?;
        let xb = self.interpolate(b)?;
        let mut times = vec![a];
        let mut states = vec![xa];
        for (t, x) in self.times.iter().zip(&self.states) {
            if *t > a && *t < b {
                times.push(*t);
                states.push(x.clone());
            }
        }
        if b > a {
            times.push(b);
            states.push(xb);
        }
        let mut out = Trajectory::from_samples(times, states);
        out.direction = self.direction;
        out.dense = self.dense.iter().filter(|s| s.hi() >= a && s.lo() <= b).cloned().collect();
        Some(out)
    }

    /// Concatenates `later`, which must start where `self` ends.
    pub fn append(&mut self, later: Trajectory) {
        let skip = usize::from(!self.times.is_empty() && later.times.first() == self.times.last());
        self.times.extend_from_slice(&later.times[skip..]);
        self.states.extend(later.states.into_iter().skip(skip));
        self.dense.extend(later.dense);
        self.accepted_steps += later.accepted_steps;
        self.rejected_steps += later.rejected_steps;
    }

    pub fn section_crossings(&self, section: &SectionSpec, tol: f64) -> Vec<Crossing> {
        let g = |x: &[f64]| section.value(x);
        let mut out = Vec::new();
        for k in 1..self.times.len() {
            let (ta, tb) = (self.times[k - 1], self.times[k]);
            let (ga, gb) = (g(&self.states[k - 1]), g(&self.states[k]));
            let increasing = ga < 0.0 && gb >= 0.0;
            let decreasing = ga > 0.0 && gb <= 0.0;
            let wanted = match section.direction {
                CrossingDirection::Increasing => increasing,
                CrossingDirection::Decreasing => decreasing,
                CrossingDirection::Both => increasing || decreasing,
            };
            if !wanted {
                continue;
            }
            let t = refine_root(|t| g(&self.interpolate(t).expect("inside")), ta, tb, ga, gb, tol);
            let x = self.interpolate(t).expect("inside");
            out.push(Crossing { t, x, increasing });
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.states.first().map_or(0, |s| s.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut rec = vec![format!("{t:.17e}")];
            rec.extend(x.iter().map(|v| format!("{v:.17e}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Illinois-modified regula falsi with bisection safeguard.
fn refine_root<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64, tol: f64) -> f64 {
    if gb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut c = (a * gb - b * ga) / (gb - ga);
        let width = (b - a).abs();
        if !c.is_finite() || (c - a).abs() < 0.01 * width || (b - c).abs() < 0.01 * width {
            c = 0.5 * (a + b);
        }
        let gc = g(c);
        if gc.abs() <= tol || width <= 4.0 * f64::EPSILON * (1.0 + c.abs()) {
            return c;
        }
        if (gc < 0.0) == (ga < 0.0) {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDirection {
    Increasing,
    Decreasing,
    Both,
}

/// Hyperplane `<normal, x> = offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub direction: CrossingDirection,
}

impl SectionSpec {
    pub fn new(normal: Vec<f64>, offset: f64, direction: CrossingDirection) -> Result<Self, IntegrateError> {
        if normal.iter().all(|&v| v == 0.0) || normal.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::InvalidInitial("section normal must be nonzero and finite".into()));
        }
        Ok(Self { normal, offset, direction })
    }

    /// Section through `point` with the given normal.
    pub fn through(point: &[f64], normal: Vec<f64>, direction: CrossingDirection) -> Result<Self, IntegrateError> {
        let offset = crate::linalg::dot(&normal, point);
        Self::new(normal, offset, direction)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.normal, &x[..self.normal.len()]) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub x: Vec<f64>,
    pub increasing: bool,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn lincomb(y: &[f64], h: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// Integrates `sys` from `t0` to `t1` (either direction).
pub fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(IntegrateError::InvalidInitial(format!("length {} != {}", y0.len(), n)));
    }
    if !t0.is_finite() || !t1.is_finite() {
        return Err(IntegrateError::InvalidInitial("non-finite time".into()));
    }
    let mut k1 = vec![0.0; n];
    if sys.rhs(t0, y0, &mut k1).is_err() {
        return Err(IntegrateError::InvalidInitial("initial state outside the domain".into()));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
        accepted_steps: 0,
        rejected_steps: 0,
        direction: dir as i8,
        dense: Vec::new(),
    };
    if t1 == t0 {
        return Ok(traj);
    }

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut y = y0.to_vec();
    let mut t = t0;
    let span = (t1 - t0).abs();
    let mut h = cfg.initial_step.min(cfg.max_step).min(span) * dir;
    let mut last_reject = false;
    let mut domain_trouble = false;
    let mut steps = 0usize;

    let finish = |mut traj: Trajectory| {
        if dir < 0.0 {
            traj.times.reverse();
            traj.states.reverse();
            traj.dense.reverse();
        }
        traj
    };

    loop {
        if steps >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded { time: t, trajectory: Box::new(finish(traj)) });
        }
        steps += 1;
        let remaining = (t1 - t).abs();
        let mut last = false;
        if h.abs() >= remaining {
            h = remaining * dir;
            last = true;
        }
        if h.abs() < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            let traj = Box::new(finish(traj));
            return Err(if domain_trouble {
                IntegrateError::LeftDomain { time: t, trajectory: traj }
            } else {
                IntegrateError::BlowUp { time: t, trajectory: traj }
            });
        }

        let stages = (|| -> Result<(), RhsFailure> {
            lincomb(&y, h, &[(A21, &k1)], &mut ytmp);
            sys.rhs(t + C2 * h, &ytmp, &mut k2)?;
            lincomb(&y, h, &[(A31, &k1), (A32, &k2)], &mut ytmp);
            sys.rhs(t + C3 * h, &ytmp, &mut k3)?;
            lincomb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut ytmp);
            sys.rhs(t + C4 * h, &ytmp, &mut k4)?;
            lincomb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut ytmp);
            sys.rhs(t + C5 * h, &ytmp, &mut k5)?;
            lincomb(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], &mut ytmp);
            sys.rhs(t + h, &ytmp, &mut k6)?;
            lincomb(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], &mut ynew);
            sys.rhs(t + h, &ynew, &mut k7)?;
            Ok(())
        })();
        if let Err(fail) = stages {
            traj.rejected_steps += 1;
            domain_trouble |= fail == RhsFailure::OutOfDomain;
            h *= 0.25;
            last_reject = true;
            continue;
        }

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            traj.rejected_steps += 1;
            h *= 0.25;
            last_reject = true;
            continue;
        }

        if err <= 1.0 {
            if cfg.dense_output {
                let mut r = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    r[0][i] = y[i];
                    r[1][i] = ydiff;
                    r[2][i] = bspl;
                    r[3][i] = ydiff - h * k7[i] - bspl;
                    r[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                traj.dense.push(DenseSegment { t0: t, h, r });
            }
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            traj.accepted_steps += 1;
            traj.times.push(t);
            traj.states.push(y.clone());
            domain_trouble = false;
            if sys.monitor_norm(&y) > cfg.blowup_bound {
                return Err(IntegrateError::BlowUp { time: t, trajectory: Box::new(finish(traj)) });
            }
            if last {
                return Ok(finish(traj));
            }
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_reject {
                fac = fac.min(1.0);
            }
            h = (h * fac).abs().min(cfg.max_step) * dir;
            last_reject = false;
        } else {
            traj.rejected_steps += 1;
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_reject = true;
        }
    }
}

pub fn integrate(
    field: &CyclicVectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    solve(field, t0, x0, t1, cfg)
}

/// Final state and fundamental matrix after flowing `x0` for time `dt`.
pub fn flow_with_variation(
    field: &CyclicVectorField,
    x0: &[f64],
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, DMatrix<f64>), IntegrateError> {
    let n = field.n();
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let sys = VariationalSystem { field };
    let cfg = cfg.without_dense();
    let traj = solve(&sys, 0.0, &y0, dt, &cfg)?;
    let yf = traj.final_state();
    Ok((yf[..n].to_vec(), DMatrix::from_column_slice(n, n, &yf[n..])))
}

/// `S(s, t)`: maps perturbations at time `s` (base state `x0`) to time `t`.
pub fn variational_flow(
    field: &CyclicVectorField,
    x0: &[f64],
    s: f64,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>, IntegrateError> {
    if s == t {
        return Ok(DMatrix::identity(field.n(), field.n()));
    }
    flow_with_variation(field, x0, t - s, cfg).map(|r| r.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointMethod {
    /// Transpose of the variational flow.
    Transpose,
    /// Backward integration of `Psi' = -A^T Psi` along the base.
    Backward,
}

/// `S*(s, t)` for `s <= t`: maps adjoint vectors at time `t` to time `s`,
/// so that `<S*(s,t) phi, v> = <phi, S(s,t) v>`.
pub fn adjoint_flow(
    field: &CyclicVectorField,
    base: &Trajectory,
    t: f64,
    s: f64,
    cfg: &IntegratorConfig,
    method: AdjointMethod,
) -> Result<DMatrix<f64>, IntegrateError> {
    let n = field.n();
    if s > t {
        return Err(IntegrateError::InvalidInitial("adjoint_flow needs s <= t".into()));
    }
    if s == t {
        return Ok(DMatrix::identity(n, n));
    }
    match method {
        AdjointMethod::Transpose => {
            let xs = base.interpolate(s).ok_or(IntegrateError::OutsideBase(s))?;
            Ok(variational_flow(field, &xs, s, t, cfg)?.transpose())
        }
        AdjointMethod::Backward => {
            if base.interpolate(s).is_none() {
                return Err(IntegrateError::OutsideBase(s));
            }
            if base.interpolate(t).is_none() {
                return Err(IntegrateError::OutsideBase(t));
            }
            let sys = AdjointSystem { field, base };
            let y0 = DMatrix::<f64>::identity(n, n);
            let traj = solve(&sys, t, y0.as_slice(), s, &cfg.without_dense())?;
            Ok(DMatrix::from_column_slice(n, n, traj.final_state()))
        }
    }
}

/// Adjoint vector solution `phi(tau) = S*(tau, t_end) phi_end` sampled at
/// `times` (all within the base and `<= t_end`).
pub fn adjoint_samples(
    field: &CyclicVectorField,
    base: &Trajectory,
    t_end: f64,
    phi_end: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    let n = field.n();
    let sys = AdjointVectorSystem { field, base };
    let t_start = times.iter().copied().fold(f64::INFINITY, f64::min);
    let traj = solve(&sys, t_end, phi_end, t_start, &IntegratorConfig { dense_output: true, ..*cfg })?;
    times.iter().map(|&t| traj.interpolate(t).map(|v| v[..n].to_vec()).ok_or(IntegrateError::OutsideBase(t))).collect()
}

struct AdjointVectorSystem<'a> {
    field: &'a CyclicVectorField,
    base: &'a Trajectory,
}

impl OdeSystem for AdjointVectorSystem<'_> {
    fn dim(&self) -> usize {
        self.field.n()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        let x = self.base.interpolate(t).ok_or(RhsFailure::OutOfDomain)?;
        let jac = self.field.jacobian(&x).map_err(map_model_err)?;
        for (i, d) in dy.iter_mut().enumerate() {
            *d = -(0..y.len()).map(|k| jac[(k, i)] * y[k]).sum::<f64>();
        }
        Ok(())
    }
}

pub fn section_crossings(
    field: &CyclicVectorField,
    x0: &[f64],
    t_span: (f64, f64),
    section: &SectionSpec,
    cfg: &IntegratorConfig,
) -> Result<Vec<Crossing>, IntegrateError> {
    let cfg = IntegratorConfig { dense_output: true, ..*cfg };
    let traj = integrate(field, x0, t_span.0, t_span.1, &cfg)?;
    Ok(traj.section_crossings(section, cfg.abs_tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_cyclic;

    #[test]
    fn zero_span_is_identity() {
        let f = linear_cyclic(3, 1.0, -1.0).unwrap();
        let tr = integrate(&f, &[1.0, 2.0, 3.0], 0.5, 0.5, &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.times, vec![0.5]);
        assert_eq!(tr.states, vec![vec![1.0, 2.0, 3.0]]);
    }

    #[test]
    fn dense_output_matches_exact_exponential() {
        let sys = FnSystem { dim: 1, f: |y: &[f64], d: &mut [f64]| d[0] = -y[0] };
        let tr = solve(&sys, 0.0, &[1.0], 3.0, &IntegratorConfig::default()).unwrap();
        for k in 0..30 {
            let t = 0.1 * k as f64 + 0.037;
            assert!((tr.interpolate(t).unwrap()[0] - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_times_increase() {
        let sys = FnSystem { dim: 1, f: |y: &[f64], d: &mut [f64]| d[0] = -y[0] };
        let tr = solve(&sys, 0.0, &[1.0], -2.0, &IntegratorConfig::default()).unwrap();
        assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
        assert!((tr.final_state()[0] - 2f64.exp()).abs() < 1e-7);
        assert_eq!(tr.final_time(), -2.0);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = IntegratorConfig { rel_tol: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(IntegrateError::InvalidConfig(_))));
    }

    #[test]
    fn root_refinement_hits_tolerance() {
        let r = refine_root(|t| t * t - 2.0, 1.0, 2.0, -1.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }
}
