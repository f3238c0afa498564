//! Connecting orbits between critical elements, discrete dichotomy frames
//! along them, transversality tests and the perturbation gadgets.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::{CriticalError, Equilibrium, PeriodicOrbit};
use crate::integrate::{flow_with_variation, integrate, IntegrateError, IntegratorConfig, Trajectory};
use crate::linalg::{self, matrix_rows};
use crate::lyapunov::{max_cone_index, n_value, NConvention};
use crate::model::{CyclicVectorField, JacobianMode, ModelError, Rhs};
use crate::schur::{RealSchur, SchurError};

#[derive(Debug, Error)]
pub enum ConnectError {
    #[error("equilibrium is not hyperbolic (eigenvalue real part {0:e})")]
    NotHyperbolic(f64),
    #[error("window half-length {have} is shorter than the requested {need}")]
    WindowTooShort { need: f64, have: f64 },
    #[error("frame collapse at step {step}: {reason}")]
    FrameCollapse { step: i64, reason: String },
    #[error("no dichotomy: {0}")]
    NoDichotomy(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("frames need equilibrium endpoints")]
    CycleEndpoint,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Schur(#[from] SchurError),
    #[error(transparent)]
    Critical(#[from] CriticalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Unstable,
    Stable,
}

/// Orthonormal basis of the unstable or stable invariant subspace of `Df(e)`.
pub fn local_invariant_basis(
    field: &CyclicVectorField,
    e: &[f64],
    which: Which,
    tol: f64,
) -> Result<DMatrix<f64>, ConnectError> {
    let jac = field.jacobian(e)?;
    invariant_basis_of(&jac, which, tol)
}

pub fn invariant_basis_of(a: &DMatrix<f64>, which: Which, tol: f64) -> Result<DMatrix<f64>, ConnectError> {
    let mut schur = RealSchur::new(a)?;
    if let Some(l) = schur.eigenvalues().iter().find(|l| l.re.abs() <= tol) {
        return Err(ConnectError::NotHyperbolic(l.re));
    }
    let k = schur.move_to_front(|ev| match which {
        Which::Unstable => ev[0].re > 0.0,
        Which::Stable => ev[0].re < 0.0,
    })?;
    Ok(schur.leading_basis(k))
}

// ---------------------------------------------------------------------------
// Connecting orbits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Endpoint {
    Equilibrium { x: Vec<f64>, morse_index: usize },
    PeriodicOrbit { anchor: Vec<f64>, period: f64, morse_index: usize },
}

impl Endpoint {
    pub fn morse_index(&self) -> usize {
        match self {
            Endpoint::Equilibrium { morse_index, .. } | Endpoint::PeriodicOrbit { morse_index, .. } => *morse_index,
        }
    }

    pub fn is_equilibrium(&self) -> bool {
        matches!(self, Endpoint::Equilibrium { .. })
    }

    pub fn point(&self) -> &[f64] {
        match self {
            Endpoint::Equilibrium { x, .. } => x,
            Endpoint::PeriodicOrbit { anchor, .. } => anchor,
        }
    }
}

impl From<&Equilibrium> for Endpoint {
    fn from(e: &Equilibrium) -> Self {
        Endpoint::Equilibrium { x: e.x.clone(), morse_index: e.morse_index }
    }
}

impl From<&PeriodicOrbit> for Endpoint {
    fn from(p: &PeriodicOrbit) -> Self {
        Endpoint::PeriodicOrbit {
            anchor: p.anchor.clone(),
            period: p.period,
            morse_index: p.classification.morse_index,
        }
    }
}

/// Target of a shooting run.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Equilibrium(&'a Equilibrium),
    Orbit(&'a PeriodicOrbit),
}

impl Target<'_> {
    fn endpoint(&self) -> Endpoint {
        match self {
            Target::Equilibrium(e) => Endpoint::from(*e),
            Target::Orbit(p) => Endpoint::from(*p),
        }
    }

    fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Target::Equilibrium(e) => linalg::dist(&e.x, x),
            Target::Orbit(p) => distance_to_cycle(p, x),
        }
    }
}

/// Distance from `x` to the closed curve of `orbit`, refined between the
/// samples by golden-section search on the dense output.
pub fn distance_to_cycle(orbit: &PeriodicOrbit, x: &[f64]) -> f64 {
    let s = &orbit.samples;
    let m = s.len();
    let (k, dk) = s
        .states
        .iter()
        .enumerate()
        .map(|(k, y)| (k, linalg::dist(x, y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("orbit has samples");
    let spacing = [k.checked_sub(1).unwrap_or(m - 1), (k + 1) % m]
        .iter()
        .map(|&j| linalg::dist(&s.states[j], &s.states[k]))
        .fold(0.0, f64::max);
    if dk > 2.0 * spacing {
        return dk;
    }
    let dt = orbit.period / m as f64;
    let t0 = s.times[k];
    let d = |t: f64| orbit.state_at(t).map_or(f64::INFINITY, |y| linalg::dist(x, &y));
    let (mut a, mut b) = (t0 - dt, t0 + dt);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut e) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fe) = (d(c), d(e));
    for _ in 0..60 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = d(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = d(e);
        }
    }
    dk.min(fc).min(fe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectingOrbit {
    /// Samples on the symmetric window `[-T, T]`.
    pub trajectory: Trajectory,
    pub half_window: f64,
    pub e_minus: Endpoint,
    pub e_plus: Endpoint,
    pub i_minus: usize,
    pub i_plus: usize,
    /// `N` of the derivative near each end, and the levels `h` with `N = 2h - 1`.
    pub n_minus: Option<usize>,
    pub n_plus: Option<usize>,
    pub h_minus: Option<usize>,
    pub h_plus: Option<usize>,
    pub convergence_errors: [f64; 2],
    /// Index of the shooting direction that produced the orbit.
    pub direction: usize,
}

impl ConnectingOrbit {
    /// Monotone drop of the derivative's level along the orbit.
    pub fn h_monotone(&self) -> Option<bool> {
        Some(self.h_plus? <= self.h_minus?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootSettings {
    /// Initial offset from the source, scaled by `max(1, |e|_inf)`.
    pub radius: f64,
    pub directions: usize,
    pub horizon: f64,
    pub conv_tol: f64,
    pub seed: u64,
    /// Connecting orbits kept in the report; hits beyond this are counted only.
    pub keep: usize,
    pub spectrum_tol: f64,
}

impl Default for ShootSettings {
    fn default() -> Self {
        Self { radius: 1e-4, directions: 64, horizon: 300.0, conv_tol: 1e-6, seed: 0, keep: 2, spectrum_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootReport {
    pub attempts: usize,
    pub hits: usize,
    pub misses: usize,
    pub integration_failures: usize,
    pub closest_approach: f64,
    pub orbits: Vec<ConnectingOrbit>,
}

/// Quasi-uniform unit vectors in `R^k`.
pub fn shooting_directions(k: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match k {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count.max(1))
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count.max(1) as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        3 => {
            let m = count.max(1);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count.max(1))
                .map(|_| {
                    let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let nv = v.norm();
                    v / nv
                })
                .collect()
        }
    }
}

/// Shoots from the unstable manifold of `source` toward `target`.
pub fn shoot_connection(
    field: &CyclicVectorField,
    source: &Equilibrium,
    target: Target<'_>,
    settings: &ShootSettings,
    conv: NConvention,
    cfg: &IntegratorConfig,
) -> Result<ShootReport, ConnectError> {
    Ok(shoot_connections(field, source, &[target], settings, conv, cfg)?.remove(0))
}

/// One shooting sweep from `source`, scored against every target; a
/// direction counts as a hit for the target its orbit ends on.
pub fn shoot_connections(
    field: &CyclicVectorField,
    source: &Equilibrium,
    targets: &[Target<'_>],
    settings: &ShootSettings,
    conv: NConvention,
    cfg: &IntegratorConfig,
) -> Result<Vec<ShootReport>, ConnectError> {
    let u = local_invariant_basis(field, &source.x, Which::Unstable, settings.spectrum_tol)?;
    let dirs = shooting_directions(u.ncols(), settings.directions, settings.seed);
    let scale = source.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let rho = settings.radius * scale;
    let dense = IntegratorConfig { dense_output: true, ..*cfg };

    enum Outcome {
        Failed,
        Landed { target: Option<usize>, orbit: Option<Result<Box<ConnectingOrbit>, ConnectError>>, closest: Vec<f64> },
    }

    let outcomes: Vec<Outcome> = dirs
        .par_iter()
        .enumerate()
        .map(|(idx, d)| {
            let offset = &u * d * rho;
            let x0: Vec<f64> = source.x.iter().zip(offset.iter()).map(|(a, b)| a + b).collect();
            let Ok(traj) = integrate(field, &x0, 0.0, settings.horizon, &dense) else {
                return Outcome::Failed;
            };
            let end = traj.final_state();
            let hit = targets.iter().position(|t| t.distance(end) <= settings.conv_tol);
            let mut closest = vec![f64::INFINITY; targets.len()];
            let mut orbit = None;
            for (j, t) in targets.iter().enumerate() {
                let dists: Vec<f64> = traj.states.iter().map(|s| t.distance(s)).collect();
                closest[j] = dists.iter().copied().fold(f64::INFINITY, f64::min);
                if hit == Some(j) {
                    orbit = build_connection(field, source, &u, *t, &traj, &dists, settings.conv_tol, idx, conv)
                        .transpose()
                        .map(|r| r.map(Box::new));
                }
            }
            Outcome::Landed { target: hit, orbit, closest }
        })
        .collect();

    let mut reports: Vec<ShootReport> = targets
        .iter()
        .map(|_| ShootReport {
            attempts: dirs.len(),
            hits: 0,
            misses: 0,
            integration_failures: 0,
            closest_approach: f64::INFINITY,
            orbits: Vec::new(),
        })
        .collect();
    for o in outcomes {
        match o {
            Outcome::Failed => reports.iter_mut().for_each(|r| r.integration_failures += 1),
            Outcome::Landed { target, orbit, closest } => {
                for (j, r) in reports.iter_mut().enumerate() {
                    r.closest_approach = r.closest_approach.min(closest[j]);
                    if target != Some(j) {
                        r.misses += 1;
                        continue;
                    }
                    match &orbit {
                        Some(Ok(c)) => {
                            r.hits += 1;
                            if r.orbits.len() < settings.keep {
                                r.orbits.push((**c).clone());
                            }
                        }
                        Some(Err(_)) => r.integration_failures += 1,
                        None => r.misses += 1,
                    }
                }
            }
        }
    }
    Ok(reports)
}

#[allow(clippy::too_many_arguments)]
fn build_connection(
    field: &CyclicVectorField,
    source: &Equilibrium,
    u: &DMatrix<f64>,
    target: Target<'_>,
    traj: &Trajectory,
    dists: &[f64],
    conv_tol: f64,
    direction: usize,
    conv: NConvention,
) -> Result<Option<ConnectingOrbit>, ConnectError> {
    let Some(k_conv) = dists.iter().position(|&d| d <= conv_tol) else {
        return Ok(None);
    };
    let t_conv = traj.times[k_conv];
    let k_mid = (0..=k_conv)
        .max_by(|&a, &b| {
            let ma = linalg::dist(&traj.states[a], &source.x).min(dists[a]);
            let mb = linalg::dist(&traj.states[b], &source.x).min(dists[b]);
            ma.total_cmp(&mb)
        })
        .unwrap_or(0);
    let t_mid = traj.times[k_mid];
    let t_final = traj.t_max();
    // time for the linear unstable flow to bring the start within conv_tol
    let slowest = source.eigenvalues.iter().map(|l| l.re).filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
    let start_dist = linalg::dist(traj.initial_state(), &source.x);
    let back =
        if slowest.is_finite() && start_dist > conv_tol { 1.05 * (start_dist / conv_tol).ln() / slowest } else { 0.0 };
    let half = (t_mid + back).max(t_conv - t_mid).min(t_final - t_mid);
    let extension = half - t_mid;
    let mut window = if extension > 0.0 {
        linear_manifold_segment(field, source, u, traj.initial_state(), extension)?
    } else {
        Trajectory::from_samples(vec![0.0], vec![traj.initial_state().to_vec()])
    };
    let forward = traj.restrict(t_mid - half.min(t_mid), t_mid + half).expect("inside the run");
    if extension > 0.0 {
        window.append(forward);
    } else {
        window = forward;
    }
    window.shift_time(-t_mid);

    let end_minus = window.states[0].clone();
    let end_plus = window.states.last().expect("nonempty").clone();
    let convergence_errors = [linalg::dist(&end_minus, &source.x), target.distance(&end_plus)];
    let sig = field.signature();
    let n_at = |x: &[f64]| -> Option<usize> {
        let f = field.evaluate(x).ok()?;
        let v = n_value(f.as_slice(), sig, conv);
        v.defined.then_some(v.value)
    };
    let n_minus = window.states.iter().find_map(|x| n_at(x));
    let n_plus = window.states.iter().rev().find_map(|x| n_at(x));
    let level = |n: Option<usize>| n.filter(|v| v % 2 == 1).map(|v| v.div_ceil(2));
    Ok(Some(ConnectingOrbit {
        trajectory: window,
        half_window: half,
        e_minus: Endpoint::from(source),
        e_plus: target.endpoint(),
        i_minus: source.morse_index,
        i_plus: target.endpoint().morse_index(),
        n_minus,
        n_plus,
        h_minus: level(n_minus),
        h_plus: level(n_plus),
        convergence_errors,
        direction,
    }))
}

/// Backward continuation of a point on the linear unstable manifold of
/// `source`, sampled on `[-length, 0]`.
fn linear_manifold_segment(
    field: &CyclicVectorField,
    source: &Equilibrium,
    u: &DMatrix<f64>,
    x_start: &[f64],
    length: f64,
) -> Result<Trajectory, ConnectError> {
    let a = field.jacobian(&source.x)?;
    let b = u.transpose() * &a * u;
    let e = DVector::from_column_slice(&source.x);
    let z0 = u.transpose() * (DVector::from_column_slice(x_start) - &e);
    let steps = ((length / 0.02).ceil() as usize).clamp(2, 50_000);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = -length + length * i as f64 / steps as f64;
        times.push(t);
        if i == steps {
            states.push(x_start.to_vec());
        } else {
            let z = (&b * t).exp() * &z0;
            states.push((&e + u * z).as_slice().to_vec());
        }
    }
    Ok(Trajectory::from_samples(times, states))
}

// ---------------------------------------------------------------------------
// Dichotomy frames

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyFrames {
    pub tau: f64,
    pub n_trunc: usize,
    #[serde(with = "matrix_rows")]
    pub u_frame_at_0: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub s_frame_at_0: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub p_minus_0: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub p_plus_0: DMatrix<f64>,
    /// Projections at 0 are the oblique dichotomy projections rather than
    /// orthogonal ones.
    pub oblique: bool,
    pub orthonormality_residual: f64,
    /// Smallest and largest step-operator norm.
    pub step_norm_range: (f64, f64),
    #[serde(skip)]
    pub operators: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub u_frames: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub s_frames: Vec<DMatrix<f64>>,
}

impl DichotomyFrames {
    /// Oblique projections onto U(n) along S(n) at every step, when the
    /// frames are complementary.
    pub fn step_projections(&self) -> Result<Vec<DMatrix<f64>>, ConnectError> {
        self.u_frames
            .iter()
            .zip(&self.s_frames)
            .enumerate()
            .map(|(k, (u, s))| {
                complementary_projection(u, s).ok_or_else(|| {
                    ConnectError::NoDichotomy(format!(
                        "frames not complementary at step {}",
                        k as i64 - self.n_trunc as i64
                    ))
                })
            })
            .collect()
    }
}

const COMPLEMENT_TOL: f64 = 1e-8;

fn complementary_projection(u: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = u.nrows();
    if u.ncols() + s.ncols() != n {
        return None;
    }
    let sv = linalg::singular_values(&linalg::hstack(u, s));
    if sv.last().is_some_and(|&m| m <= COMPLEMENT_TOL) {
        return None;
    }
    linalg::oblique_projection(u, s)
}

fn orthonormality(q: &DMatrix<f64>) -> f64 {
    if q.ncols() == 0 {
        return 0.0;
    }
    (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).amax()
}

fn qr_step(m: &DMatrix<f64>, step: i64) -> Result<DMatrix<f64>, ConnectError> {
    if m.ncols() == 0 {
        return Ok(m.clone());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ConnectError::FrameCollapse { step, reason: "non-finite frame".into() });
    }
    let (q, r) = linalg::qr_thin(m);
    let d: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].abs()).collect();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo > 1e-13 * hi) {
        return Err(ConnectError::FrameCollapse {
            step,
            reason: format!("rank loss (R diagonal ratio {:e})", lo / hi),
        });
    }
    Ok(q)
}

/// Frames for the operator sequence `ops[k] : step k - N -> k - N + 1`,
/// `N = ops.len() / 2`, started from `u_init` at `-N` and `s_init` at `+N`.
pub fn dichotomy_frames_from_operators(
    ops: &[DMatrix<f64>],
    u_init: &DMatrix<f64>,
    s_init: &DMatrix<f64>,
    tau: f64,
) -> Result<DichotomyFrames, ConnectError> {
    if ops.is_empty() || !ops.len().is_multiple_of(2) {
        return Err(ConnectError::DimensionMismatch("operator count must be even and positive".into()));
    }
    let n = u_init.nrows();
    if s_init.nrows() != n || ops.iter().any(|t| t.shape() != (n, n)) {
        return Err(ConnectError::DimensionMismatch("frames and operators disagree in size".into()));
    }
    let big_n = ops.len() / 2;
    let mut resid = 0.0f64;
    let mut u_frames = Vec::with_capacity(ops.len() + 1);
    let mut u = qr_step(u_init, -(big_n as i64))?;
    resid = resid.max(orthonormality(&u));
    u_frames.push(u.clone());
    for (k, t) in ops.iter().enumerate() {
        u = qr_step(&(t * &u), k as i64 + 1 - big_n as i64)?;
        resid = resid.max(orthonormality(&u));
        u_frames.push(u.clone());
    }
    let mut s_frames = vec![DMatrix::zeros(n, s_init.ncols()); ops.len() + 1];
    let mut s = qr_step(s_init, big_n as i64)?;
    resid = resid.max(orthonormality(&s));
    s_frames[ops.len()] = s.clone();
    for k in (0..ops.len()).rev() {
        let step = k as i64 - big_n as i64;
        let pulled = if s.ncols() == 0 {
            s.clone()
        } else {
            ops[k]
                .clone()
                .lu()
                .solve(&s)
                .ok_or(ConnectError::FrameCollapse { step, reason: "singular step operator".into() })?
        };
        s = qr_step(&pulled, step)?;
        resid = resid.max(orthonormality(&s));
        s_frames[k] = s.clone();
    }
    let norms: Vec<f64> = ops.iter().map(linalg::spectral_norm).collect();
    let step_norm_range = norms.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let u0 = u_frames[big_n].clone();
    let s0 = s_frames[big_n].clone();
    let (p_minus_0, p_plus_0, oblique) = match complementary_projection(&u0, &s0) {
        Some(p) => (p.clone(), p, true),
        None => {
            (linalg::orthogonal_projection(&u0), DMatrix::identity(n, n) - linalg::orthogonal_projection(&s0), false)
        }
    };
    Ok(DichotomyFrames {
        tau,
        n_trunc: big_n,
        u_frame_at_0: u0,
        s_frame_at_0: s0,
        p_minus_0,
        p_plus_0,
        oblique,
        orthonormality_residual: resid,
        step_norm_range,
        operators: ops.to_vec(),
        u_frames,
        s_frames,
    })
}

/// Step keeping every step operator's norm below 10.
pub fn default_tau(field: &CyclicVectorField, orbit: &ConnectingOrbit) -> Result<f64, ConnectError> {
    let mut worst = 0.0f64;
    for x in &orbit.trajectory.states {
        worst = worst.max(linalg::spectral_norm(&field.jacobian(x)?));
    }
    Ok(if worst > 0.0 { (10f64.ln() / worst).clamp(1e-3, 1.0) } else { 1.0 })
}

/// Frames along a connection between equilibria: the unstable frame is
/// pushed forward from `-N tau`, the stable frame pulled back from `N tau`.
pub fn dichotomy_frames(
    field: &CyclicVectorField,
    orbit: &ConnectingOrbit,
    tau: f64,
    n_trunc: usize,
    spectrum_tol: f64,
    cfg: &IntegratorConfig,
) -> Result<DichotomyFrames, ConnectError> {
    let (Endpoint::Equilibrium { x: em, .. }, Endpoint::Equilibrium { x: ep, .. }) = (&orbit.e_minus, &orbit.e_plus)
    else {
        return Err(ConnectError::CycleEndpoint);
    };
    if !(tau > 0.0) || n_trunc == 0 {
        return Err(ConnectError::DimensionMismatch("tau and n_trunc must be positive".into()));
    }
    let need = n_trunc as f64 * tau;
    if need > orbit.half_window * (1.0 + 1e-9) {
        return Err(ConnectError::WindowTooShort { need, have: orbit.half_window });
    }
    let ops = (0..2 * n_trunc)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 - n_trunc as f64) * tau;
            let x = orbit.trajectory.interpolate(t).ok_or(IntegrateError::OutsideBase(t))?;
            Ok(flow_with_variation(field, &x, tau, cfg)?.1)
        })
        .collect::<Result<Vec<_>, ConnectError>>()?;
    let u_init = local_invariant_basis(field, em, Which::Unstable, spectrum_tol)?;
    let s_init = local_invariant_basis(field, ep, Which::Stable, spectrum_tol)?;
    dichotomy_frames_from_operators(&ops, &u_init, &s_init, tau)
}

// ---------------------------------------------------------------------------
// Transversality

pub const DEFAULT_ANGLE_TOL: f64 = 1e-6;
pub const CONFIDENT_ANGLE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prediction {
    PredictedTransverse { case: String },
    NotCovered { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub transverse: bool,
    pub span_defect: usize,
    pub min_principal_angle: f64,
    pub bounded_adjoint_dim: usize,
    pub fredholm_index: i64,
    /// Transverse but with the complements closer than the confident angle.
    pub gray_zone: bool,
    /// The three rank criteria agree.
    pub criteria_agree: bool,
    pub automatic_prediction: Option<Prediction>,
}

/// Decides `U + S = R^n` from orthonormal frames of the unstable and stable
/// tangent spaces.
pub fn transversality_test(
    u: &DMatrix<f64>,
    s: &DMatrix<f64>,
    i_minus: usize,
    i_plus: usize,
    angle_tol: f64,
) -> Result<TransversalityReport, ConnectError> {
    let n = u.nrows();
    if s.nrows() != n || u.ncols() != i_minus || i_plus > n || s.ncols() != n - i_plus {
        return Err(ConnectError::DimensionMismatch(format!(
            "U is {}x{}, S is {}x{}, indices ({i_minus}, {i_plus})",
            u.nrows(),
            u.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let stacked = linalg::hstack(u, s);
    let rank = linalg::singular_values(&stacked).iter().filter(|&&v| v > angle_tol).count();
    let span_defect = n - rank.min(n);
    let uc = linalg::orth_complement(u);
    let sc = linalg::orth_complement(s);
    let angles = if uc.ncols() == 0 || sc.ncols() == 0 { Vec::new() } else { linalg::principal_angles(&uc, &sc) };
    let min_principal_angle = angles.first().copied().unwrap_or(std::f64::consts::FRAC_PI_2);
    let bounded_adjoint_dim = angles.iter().filter(|&&a| a <= angle_tol).count();
    let transverse = span_defect == 0;
    Ok(TransversalityReport {
        transverse,
        span_defect,
        min_principal_angle,
        bounded_adjoint_dim,
        fredholm_index: i_minus as i64 - i_plus as i64,
        gray_zone: transverse && min_principal_angle <= CONFIDENT_ANGLE,
        criteria_agree: (span_defect == 0) == (bounded_adjoint_dim == 0)
            && (span_defect == 0) == (min_principal_angle > angle_tol),
        automatic_prediction: None,
    })
}

pub fn transversality_of_frames(
    frames: &DichotomyFrames,
    i_minus: usize,
    i_plus: usize,
    angle_tol: f64,
) -> Result<TransversalityReport, ConnectError> {
    transversality_test(&frames.u_frame_at_0, &frames.s_frame_at_0, i_minus, i_plus, angle_tol)
}

/// Which case of the automatic transversality criterion covers a pair of
/// endpoints, judged from their kinds and indices.
pub fn predict(e_minus: &Endpoint, e_plus: &Endpoint, n: usize) -> Prediction {
    if !e_minus.is_equilibrium() || !e_plus.is_equilibrium() {
        return Prediction::PredictedTransverse { case: "i".into() };
    }
    let (im, ip) = (e_minus.morse_index(), e_plus.morse_index());
    if (1..=max_cone_index(n)).any(|h| im >= 2 * h && 2 * h >= ip) {
        return Prediction::PredictedTransverse { case: "ii".into() };
    }
    if im == ip && im % 2 == 1 {
        Prediction::NotCovered { reason: format!("equal odd indices {im}") }
    } else {
        Prediction::NotCovered { reason: format!("no h with {im} >= 2h >= {ip}") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub prediction: Prediction,
    /// `i(e+) <= 2h+ - 1` for an equilibrium target.
    pub target_bound: Option<bool>,
    /// `i(e-) >= max(2h- - 1, 1)` for an equilibrium source.
    pub source_bound: Option<bool>,
    pub h_monotone: Option<bool>,
    /// Minimal planar distances for homoindexed orbits, per coordinate pair.
    pub injectivity_margins: Vec<f64>,
}

impl PredictionRecord {
    /// All checked inequalities hold.
    pub fn consistent(&self) -> bool {
        [self.target_bound, self.source_bound, self.h_monotone].iter().all(|c| c.unwrap_or(true))
            && self.injectivity_margins.iter().all(|&m| m > 0.0)
    }
}

/// Distance floor separating a homoclinic orbit from its equilibrium.
pub const HOMOCLINIC_FLOOR: f64 = 1e-9;

pub fn automatic_transversality_check(orbit: &ConnectingOrbit, n: usize) -> PredictionRecord {
    let prediction = predict(&orbit.e_minus, &orbit.e_plus, n);
    let target_bound = match (&orbit.e_plus, orbit.h_plus) {
        (Endpoint::Equilibrium { morse_index, .. }, Some(h)) => Some(*morse_index < 2 * h),
        _ => None,
    };
    let source_bound = match (&orbit.e_minus, orbit.h_minus) {
        (Endpoint::Equilibrium { morse_index, .. }, Some(h)) => Some(*morse_index + 1 >= (2 * h).max(2)),
        _ => None,
    };
    let mut injectivity_margins = Vec::new();
    let homoindexed = orbit.e_minus.is_equilibrium()
        && orbit.e_plus.is_equilibrium()
        && orbit.i_minus == orbit.i_plus
        && orbit.i_minus % 2 == 1;
    if homoindexed {
        let pts: Vec<&Vec<f64>> = orbit
            .trajectory
            .states
            .iter()
            .filter(|x| {
                linalg::dist(x, orbit.e_minus.point()) > HOMOCLINIC_FLOOR
                    && linalg::dist(x, orbit.e_plus.point()) > HOMOCLINIC_FLOOR
            })
            .collect();
        for s in 0..n {
            let proj: Vec<(f64, f64)> = pts.iter().map(|x| (x[s], x[(s + 1) % n])).collect();
            injectivity_margins.push(open_curve_min_distance(&proj, 2));
        }
    }
    PredictionRecord { prediction, target_bound, source_bound, h_monotone: orbit.h_monotone(), injectivity_margins }
}

/// Minimal distance between points of an open sampled curve at least
/// `min_sep` indices apart.
fn open_curve_min_distance(points: &[(f64, f64)], min_sep: usize) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..points.len() {
        for b in a + min_sep..points.len() {
            best = best.min((points[a].0 - points[b].0).hypot(points[a].1 - points[b].1));
        }
    }
    best
}

/// Frames, verdict and prediction for one connection; a verdict contradicting
/// the prediction is recomputed once with a halved step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionAnalysis {
    pub frames: Option<DichotomyFrames>,
    pub report: Option<TransversalityReport>,
    pub record: PredictionRecord,
    pub refined: bool,
    pub error: Option<String>,
}

pub fn analyze_connection(
    field: &CyclicVectorField,
    orbit: &ConnectingOrbit,
    angle_tol: f64,
    spectrum_tol: f64,
    cfg: &IntegratorConfig,
) -> ConnectionAnalysis {
    let n = field.n();
    let record = automatic_transversality_check(orbit, n);
    let mut out = ConnectionAnalysis { frames: None, report: None, record, refined: false, error: None };
    if !(orbit.e_minus.is_equilibrium() && orbit.e_plus.is_equilibrium()) {
        return out;
    }
    let run = |tau: f64| -> Result<(DichotomyFrames, TransversalityReport), ConnectError> {
        let n_trunc = ((orbit.half_window / tau).floor() as usize).max(1);
        let frames = dichotomy_frames(field, orbit, tau, n_trunc, spectrum_tol, cfg)?;
        let mut rep = transversality_of_frames(&frames, orbit.i_minus, orbit.i_plus, angle_tol)?;
        rep.automatic_prediction = Some(out.record.prediction.clone());
        Ok((frames, rep))
    };
    let tau = match default_tau(field, orbit) {
        Ok(t) => t,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut result = run(tau);
    let predicted = matches!(out.record.prediction, Prediction::PredictedTransverse { .. });
    if predicted && !matches!(&result, Ok((_, r)) if r.transverse) {
        out.refined = true;
        result = run(0.5 * tau);
    }
    match result {
        Ok((f, r)) => {
            out.frames = Some(f);
            out.report = Some(r);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

// ---------------------------------------------------------------------------
// Green function and roughness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSolution {
    pub y: Vec<Vec<f64>>,
    /// `max |Y(n+1) - T_n Y(n) - f(n)|` over the interior steps.
    pub residual: f64,
    /// Range of step indices (into `y`) treated as interior.
    pub interior: (usize, usize),
}

/// Bounded solution of `Y(n+1) = T_n Y(n) + f(n)` on a truncated window:
/// the stable part is summed forward from the left edge and the unstable
/// part backward from the right edge. `projections[k]` projects onto the
/// unstable space at step `k` along the stable one.
pub fn green_function_solve(
    ops: &[DMatrix<f64>],
    projections: &[DMatrix<f64>],
    f: &[DVector<f64>],
    margin: usize,
) -> Result<GreenSolution, ConnectError> {
    let m = ops.len();
    if projections.len() != m + 1 || f.len() != m {
        return Err(ConnectError::DimensionMismatch(format!(
            "{} operators need {} projections and {} forcing terms",
            m,
            m + 1,
            m
        )));
    }
    let n = projections.first().map_or(0, |p| p.nrows());
    let id = DMatrix::<f64>::identity(n, n);
    let mut ys = vec![DVector::<f64>::zeros(n); m + 1];
    for k in 0..m {
        // the exact iterate stays in the stable space; projecting again
        // keeps rounding errors from growing along unstable directions
        ys[k + 1] = (&id - &projections[k + 1]) * (&ops[k] * &ys[k] + &f[k]);
    }
    let mut yu = vec![DVector::<f64>::zeros(n); m + 1];
    for k in (0..m).rev() {
        let rhs = &yu[k + 1] - &projections[k + 1] * &f[k];
        let pulled = ops[k]
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| ConnectError::NoDichotomy(format!("singular operator at {k}")))?;
        yu[k] = &projections[k] * pulled;
    }
    let y: Vec<DVector<f64>> = ys.iter().zip(&yu).map(|(a, b)| a + b).collect();
    let lo = margin.min(m);
    let hi = m.saturating_sub(margin).max(lo);
    let residual = (lo..hi).map(|k| (&y[k + 1] - &ops[k] * &y[k] - &f[k]).amax()).fold(0.0, f64::max);
    Ok(GreenSolution { y: y.iter().map(|v| v.as_slice().to_vec()).collect(), residual, interior: (lo, hi) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessEntry {
    pub epsilon: f64,
    pub deviation: Option<f64>,
    pub collapse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessReport {
    pub entries: Vec<RoughnessEntry>,
    /// Least-squares slope of log deviation against log epsilon.
    pub slope: Option<f64>,
}

/// Checks that the propagated frames still separate growth rates: every
/// step expands the unstable frame more than it expands the stable one.
fn dichotomy_consistent(frames: &DichotomyFrames) -> Result<(), String> {
    for (k, t) in frames.operators.iter().enumerate() {
        let (u, s) = (&frames.u_frames[k], &frames.s_frames[k]);
        if u.ncols() == 0 || s.ncols() == 0 {
            continue;
        }
        let tu = linalg::singular_values(&(t * u));
        let ts = linalg::singular_values(&(t * s));
        if tu.last().copied().unwrap_or(0.0) <= ts.first().copied().unwrap_or(0.0) {
            return Err(format!("growth rates overlap at step {}", k as i64 - frames.n_trunc as i64));
        }
    }
    Ok(())
}

/// Perturbs each operator by a random matrix of norm `eps` and measures the
/// largest change of the dichotomy projections.
pub fn dichotomy_roughness_probe(
    ops: &[DMatrix<f64>],
    u_init: &DMatrix<f64>,
    s_init: &DMatrix<f64>,
    scales: &[f64],
    seed: u64,
) -> Result<RoughnessReport, ConnectError> {
    let base = dichotomy_frames_from_operators(ops, u_init, s_init, 1.0)?;
    dichotomy_consistent(&base).map_err(ConnectError::NoDichotomy)?;
    let base_p = base.step_projections()?;
    let n = u_init.nrows();
    let entries: Vec<RoughnessEntry> = scales
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            if eps == 0.0 {
                return RoughnessEntry { epsilon: eps, deviation: Some(0.0), collapse: None };
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let perturbed: Vec<DMatrix<f64>> = ops
                .iter()
                .map(|t| {
                    let e = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let ne = linalg::spectral_norm(&e);
                    t + e * (eps / ne)
                })
                .collect();
            let outcome = dichotomy_frames_from_operators(&perturbed, u_init, s_init, 1.0).and_then(|fr| {
                dichotomy_consistent(&fr).map_err(ConnectError::NoDichotomy)?;
                fr.step_projections()
            });
            match outcome {
                Ok(p) => {
                    let dev = p.iter().zip(&base_p).map(|(a, b)| linalg::spectral_norm(&(a - b))).fold(0.0, f64::max);
                    RoughnessEntry { epsilon: eps, deviation: Some(dev), collapse: None }
                }
                Err(e) => RoughnessEntry { epsilon: eps, deviation: None, collapse: Some(e.to_string()) },
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .filter_map(|e| match e.deviation {
            Some(d) if e.epsilon > 0.0 && d > 0.0 => Some((e.epsilon.ln(), d.ln())),
            _ => None,
        })
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let m = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(RoughnessReport { entries, slope })
}

// ---------------------------------------------------------------------------
// Perturbation gadgets

fn xi(y: f64) -> f64 {
    if y > 0.0 {
        (-1.0 / y).exp()
    } else {
        0.0
    }
}

fn xi_prime(y: f64) -> f64 {
    let v = xi(y);
    if v == 0.0 {
        0.0
    } else {
        v / (y * y)
    }
}

/// `psi(d) = xi(r - d) / (xi(r - d) + xi(d - r/2))` and its derivative in `d`.
pub fn bump_profile(d: f64, r: f64) -> (f64, f64) {
    let a = xi(r - d);
    let b = xi(d - 0.5 * r);
    let s = a + b;
    let value = a / s;
    let (da, db) = (-xi_prime(r - d), xi_prime(d - 0.5 * r));
    (value, (da * b - a * db) / (s * s))
}

struct BumpRhs {
    n: usize,
    j: usize,
    center: (f64, f64),
    r: f64,
}

impl BumpRhs {
    fn d(&self, x: &[f64]) -> (f64, f64, f64) {
        let u = x[self.j] - self.center.0;
        let v = x[(self.j + 1) % self.n] - self.center.1;
        (u * u + v * v, u, v)
    }
}

impl Rhs for BumpRhs {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[self.j] = bump_profile(self.d(x).0, self.r).0;
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        jac.fill(0.0);
        let (d, u, v) = self.d(x);
        let dp = bump_profile(d, self.r).1;
        jac[(self.j, self.j)] += 2.0 * u * dp;
        jac[(self.j, (self.j + 1) % self.n)] += 2.0 * v * dp;
        true
    }
}

/// Field whose `j`-th component (1-based) is the smooth bump in the
/// coordinates `(x_j, x_{j+1})` centred at `center`; other components vanish.
pub fn bump_perturbation(
    template: &CyclicVectorField,
    j: usize,
    center: (f64, f64),
    r: f64,
) -> Result<CyclicVectorField, ModelError> {
    let n = template.n();
    if !(r > 0.0) {
        return Err(ModelError::InvalidParameter("bump radius must be positive".into()));
    }
    if j == 0 || j > n {
        return Err(ModelError::InvalidParameter(format!("bump component {j} outside 1..={n}")));
    }
    let rhs = Arc::new(BumpRhs { n, j: j - 1, center, r });
    Ok(CyclicVectorField::new(
        format!("bump_{j}"),
        rhs,
        JacobianMode::Analytic,
        crate::model::DomainBox::whole(n),
        template.signature().clone(),
    )?
    .with_descriptor(
        serde_json::json!({ "name": "bump", "params": { "j": j, "center": [center.0, center.1], "r": r } }),
    ))
}

/// `integral <phi(s), h(x(s))> ds` by composite Simpson on the sample grid.
pub fn functional_transversality_integral(
    orbit: &Trajectory,
    phi: &[Vec<f64>],
    h: &CyclicVectorField,
) -> Result<f64, ConnectError> {
    if phi.len() != orbit.len() {
        return Err(ConnectError::GridMismatch(format!(
            "{} adjoint samples for {} orbit samples",
            phi.len(),
            orbit.len()
        )));
    }
    let vals = orbit
        .states
        .iter()
        .zip(phi)
        .map(|(x, p)| Ok(linalg::dot(h.evaluate(x)?.as_slice(), p)))
        .collect::<Result<Vec<f64>, ConnectError>>()?;
    Ok(simpson_nonuniform(&orbit.times, &vals))
}

/// Composite Simpson rule for irregular grids.
pub fn simpson_nonuniform(t: &[f64], y: &[f64]) -> f64 {
    let m = t.len();
    if m < 2 {
        return 0.0;
    }
    if m == 2 {
        return 0.5 * (t[1] - t[0]) * (y[0] + y[1]);
    }
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 < m {
        let (h0, h1) = (t[i + 1] - t[i], t[i + 2] - t[i + 1]);
        acc += (h0 + h1) / 6.0
            * ((2.0 - h1 / h0) * y[i] + (h0 + h1).powi(2) / (h0 * h1) * y[i + 1] + (2.0 - h0 / h1) * y[i + 2]);
        i += 2;
    }
    if i + 1 < m {
        let (h0, h1) = (t[m - 2] - t[m - 3], t[m - 1] - t[m - 2]);
        let alpha = (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
        let beta = (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
        let eta = h1.powi(3) / (6.0 * h0 * (h0 + h1));
        acc += alpha * y[m - 1] + beta * y[m - 2] - eta * y[m - 3];
    }
    acc
}

/// `f + alpha (x - e)`: moves every eigenvalue at `e` by `alpha` for a
/// linear field, approximately otherwise.
pub fn perturb_to_hyperbolic(
    field: &CyclicVectorField,
    e: &[f64],
    alpha: f64,
) -> Result<CyclicVectorField, ModelError> {
    if alpha == 0.0 {
        return Ok(field.clone());
    }
    field.affine_shift(&vec![0.0; field.n()], alpha, e)
}

/// `f + lambda`.
pub fn constant_shift(field: &CyclicVectorField, lambda: &[f64]) -> Result<CyclicVectorField, ModelError> {
    let n = field.n();
    field.affine_shift(lambda, 0.0, &vec![0.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{classify_equilibrium, find_equilibria, NewtonSettings};
    use crate::model::{bidirectional_synthetic, linear_cyclic, SyntheticParams};

    fn cols(n: usize, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(n, idx.len(), |i, j| if i == idx[j] { 1.0 } else { 0.0 })
    }

    #[test]
    fn coordinate_frames() {
        let r = transversality_test(&cols(3, &[0, 1]), &cols(3, &[1, 2]), 2, 1, DEFAULT_ANGLE_TOL).unwrap();
        assert_eq!((r.span_defect, r.bounded_adjoint_dim, r.transverse), (0, 0, true));
        assert!(r.criteria_agree);
        let r = transversality_test(&cols(3, &[0]), &cols(3, &[0, 1]), 1, 1, DEFAULT_ANGLE_TOL).unwrap();
        assert_eq!((r.span_defect, r.bounded_adjoint_dim, r.transverse), (1, 1, false));
        assert!(r.criteria_agree);
        assert!(transversality_test(&cols(3, &[0]), &cols(3, &[0, 1]), 2, 1, 1e-6).is_err());
    }

    #[test]
    fn unstable_plane_of_linear_cyclic() {
        let f = linear_cyclic(3, 3.0, -1.0).unwrap();
        let u = local_invariant_basis(&f, &[0.0; 3], Which::Unstable, 1e-8).unwrap();
        assert_eq!(u.ncols(), 2);
        let s = local_invariant_basis(&f, &[0.0; 3], Which::Stable, 1e-8).unwrap();
        // the real eigenvector (1, -1, 1) spans the stable line
        let v = DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 1.0]) / 3f64.sqrt();
        assert!(linalg::subspace_distance(&s, &v) < 1e-10);
        assert_eq!(linalg::singular_values(&linalg::hstack(&u, &s)).iter().filter(|&&x| x > 1e-8).count(), 3);
        let g = linear_cyclic(3, 1.0, -1.0).unwrap();
        assert_eq!(local_invariant_basis(&g, &[0.0; 3], Which::Unstable, 1e-8).unwrap().ncols(), 0);
        let h = linear_cyclic(3, 2.0, -1.0).unwrap();
        assert!(matches!(
            local_invariant_basis(&h, &[0.0; 3], Which::Unstable, 1e-8),
            Err(ConnectError::NotHyperbolic(_))
        ));
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump_profile(0.0, 1.0).0, 1.0);
        assert_eq!(bump_profile(1.0, 1.0).0, 0.0);
        assert!((bump_profile(0.75, 1.0).0 - 0.5).abs() < 1e-15);
        let (d, r, h) = (0.7, 1.0, 1e-6);
        let fd = (bump_profile(d + h, r).0 - bump_profile(d - h, r).0) / (2.0 * h);
        assert!((fd - bump_profile(d, r).1).abs() < 1e-6);
    }

    #[test]
    fn predictions() {
        let eq = |i| Endpoint::Equilibrium { x: vec![0.0; 3], morse_index: i };
        let cyc = Endpoint::PeriodicOrbit { anchor: vec![0.0; 3], period: 1.0, morse_index: 0 };
        assert_eq!(predict(&eq(2), &eq(0), 3), Prediction::PredictedTransverse { case: "ii".into() });
        assert_eq!(predict(&eq(2), &cyc, 3), Prediction::PredictedTransverse { case: "i".into() });
        assert!(matches!(predict(&eq(1), &eq(1), 3), Prediction::NotCovered { .. }));
    }

    #[test]
    fn green_constant() {
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let m = 200;
        let ops = vec![t.clone(); m];
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let f = vec![DVector::from_vec(vec![1.0, 0.0]); m];
        let sol = green_function_solve(&ops, &vec![p; m + 1], &f, 60).unwrap();
        for k in 0..m - 60 {
            assert_eq!(sol.y[k], vec![-1.0, 0.0]);
        }
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn constant_frames_are_spectral() {
        let a = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, 0.0, 0.1, 0.4, 0.2, 0.0, 0.5, 0.3]);
        let u = invariant_basis_of(&(a.clone() - DMatrix::identity(3, 3)), Which::Unstable, 1e-10).unwrap();
        let s = invariant_basis_of(&(a.clone() - DMatrix::identity(3, 3)), Which::Stable, 1e-10).unwrap();
        let t = (a.clone() - DMatrix::identity(3, 3)).exp();
        let fr = dichotomy_frames_from_operators(&vec![t; 40], &u, &s, 1.0).unwrap();
        assert!(fr.oblique);
        for k in 0..=40 {
            assert!(linalg::subspace_distance(&fr.u_frames[k], &u) < 1e-8);
            assert!(linalg::subspace_distance(&fr.s_frames[k], &s) < 1e-8);
        }
        let spectral = linalg::oblique_projection(&u, &s).unwrap();
        assert!((&fr.p_minus_0 - &spectral).amax() < 1e-8);
    }

    #[test]
    fn synthetic_two_to_zero_connection() {
        let f = bidirectional_synthetic(3, SyntheticParams::bistable3()).unwrap();
        let cfg = IntegratorConfig::default();
        let search = find_equilibria(&f, &[-1.6; 3], &[1.6; 3], 8, &NewtonSettings::default()).unwrap();
        let src = search.equilibria.iter().find(|e| e.morse_index == 2).unwrap();
        let sinks: Vec<&Equilibrium> = search.equilibria.iter().filter(|e| e.morse_index == 0).collect();
        let mut found = None;
        for t in &sinks {
            let rep = shoot_connection(
                &f,
                src,
                Target::Equilibrium(t),
                &ShootSettings::default(),
                NConvention::default(),
                &cfg,
            )
            .unwrap();
            if let Some(o) = rep.orbits.into_iter().next() {
                found = Some(o);
                break;
            }
        }
        let orbit = found.expect("some sink is reached");
        assert!(orbit.convergence_errors.iter().all(|&e| e <= 1e-6), "{:?}", orbit.convergence_errors);
        let a = analyze_connection(&f, &orbit, DEFAULT_ANGLE_TOL, 1e-8, &cfg);
        let r = a.report.expect("frames built");
        assert!(r.transverse && r.min_principal_angle > 1e-3);
        assert_eq!(r.fredholm_index, 2);
        let _ = classify_equilibrium(&f, &src.x, 1e-8).unwrap();
    }

    #[test]
    fn goodwin_focus_connects_to_its_cycle() {
        use crate::critical::{find_periodic_orbit, OrbitSettings};
        use crate::model::goodwin;
        let f = goodwin(24.0, 0.8).unwrap();
        let cfg = IntegratorConfig::default();
        let search = find_equilibria(&f, &[1e-3; 3], &[3.0; 3], 3, &NewtonSettings::default()).unwrap();
        let e = &search.equilibria[0];
        let cycle = find_periodic_orbit(&f, &[0.5, 0.5, 0.5], None, &cfg, &OrbitSettings::default()).unwrap();
        let settings = ShootSettings { directions: 16, ..ShootSettings::default() };
        let rep = shoot_connection(&f, e, Target::Orbit(&cycle), &settings, NConvention::default(), &cfg).unwrap();
        assert_eq!(rep.hits, 16, "{rep:?}");
        let o = &rep.orbits[0];
        let rec = automatic_transversality_check(o, 3);
        assert_eq!(rec.prediction, Prediction::PredictedTransverse { case: "i".into() });
        assert!(rec.consistent(), "{rec:?}");
        assert_eq!(o.h_minus, Some(1));
    }
}
