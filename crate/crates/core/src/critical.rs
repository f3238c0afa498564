//! Equilibria and periodic orbits: location, spectral classification and the
//! planar-projection injectivity check.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{
    flow_with_variation, integrate, CrossingDirection, IntegrateError, IntegratorConfig, SectionSpec, Trajectory,
};
use crate::linalg::{self, complex_vec, matrix_rows};
use crate::model::{grid_points, CyclicVectorField, ModelError};
use crate::schur::{RealSchur, SchurError};

pub const DEFAULT_SPECTRUM_TOL: f64 = 1e-8;
pub const DEFAULT_MULTIPLIER_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CriticalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Schur(#[from] SchurError),
    #[error("no return to the section within time {horizon}")]
    NoReturn { horizon: f64 },
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("trajectory converged to an equilibrium near {x:?}")]
    ConvergedToEquilibrium { x: Vec<f64> },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CriticalError {
    pub fn kind(&self) -> &'static str {
        match self {
            CriticalError::Model(_) => "ModelError",
            CriticalError::Integrate(e) => e.kind(),
            CriticalError::Schur(_) => "SchurError",
            CriticalError::NoReturn { .. } => "NoReturn",
            CriticalError::NewtonDiverged { .. } => "NewtonDiverged",
            CriticalError::ConvergedToEquilibrium { .. } => "ConvergedToEquilibrium",
            CriticalError::TooFewSamples { .. } => "TooFewSamples",
            CriticalError::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    #[serde(with = "complex_vec")]
    pub eigenvalues: Vec<Complex<f64>>,
    /// Number of eigenvalues with positive real part.
    pub morse_index: usize,
    pub simple: bool,
    pub hyperbolic: bool,
    pub residual: f64,
}

/// Eigenvalues sorted by decreasing real part, ties by imaginary part.
fn sorted_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, SchurError> {
    let mut ev = RealSchur::new(a)?.eigenvalues();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

pub fn classify_equilibrium(field: &CyclicVectorField, x: &[f64], tol: f64) -> Result<Equilibrium, CriticalError> {
    let f = field.evaluate(x)?;
    let jac = field.jacobian(x)?;
    let eigenvalues = sorted_eigenvalues(&jac)?;
    Ok(Equilibrium {
        x: x.to_vec(),
        morse_index: eigenvalues.iter().filter(|l| l.re > tol).count(),
        simple: eigenvalues.iter().all(|l| l.norm() > tol),
        hyperbolic: eigenvalues.iter().all(|l| l.re.abs() > tol),
        eigenvalues,
        residual: f.norm(),
    })
}

/// Unstable dimension read from `e^{A}`: eigenvalues of modulus above one.
pub fn morse_index_via_exponential(eigenvalues: &[Complex<f64>], tol: f64) -> usize {
    eigenvalues.iter().filter(|l| l.re.exp() > 1.0 + tol).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    /// Convergence threshold on `|f(x)|`.
    pub tol: f64,
    pub max_iter: usize,
    pub spectrum_tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60, spectrum_tol: DEFAULT_SPECTRUM_TOL }
    }
}

fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, 1e-13 * smax.max(f64::MIN_POSITIVE)).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Damped Newton from `x0`; `None` if it stalls, leaves the domain or runs
/// out of iterations.
pub fn newton_equilibrium(field: &CyclicVectorField, x0: &[f64], settings: &NewtonSettings) -> Option<Vec<f64>> {
    let mut x = DVector::from_column_slice(x0);
    let mut fx = field.evaluate(x.as_slice()).ok()?;
    for _ in 0..settings.max_iter {
        let r = fx.norm();
        if r <= settings.tol {
            // one polishing step when it helps
            if let Ok(jac) = field.jacobian(x.as_slice()) {
                if let Some(dx) = solve_linear(&jac, &(-&fx)) {
                    let y = &x + dx;
                    if let Ok(fy) = field.evaluate(y.as_slice()) {
                        if fy.norm() < r {
                            return Some(y.as_slice().to_vec());
                        }
                    }
                }
            }
            return Some(x.as_slice().to_vec());
        }
        let jac = field.jacobian(x.as_slice()).ok()?;
        let dx = solve_linear(&jac, &(-&fx))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let y = &x + lambda * &dx;
            if let Ok(fy) = field.evaluate(y.as_slice()) {
                if fy.norm() < r || fy.norm() <= settings.tol {
                    x = y;
                    fx = fy;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (fx.norm() <= settings.tol).then(|| x.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub equilibria: Vec<Equilibrium>,
    pub starts: usize,
    pub non_converged: usize,
    /// Converged starts whose root fell outside the search box.
    pub outside_box: usize,
}

pub fn dedup_radius(x: &[f64]) -> f64 {
    1e-6 * (1.0 + linalg::norm(x))
}

/// Multi-start Newton from the cell centres of a grid on `[lo, hi]`.
pub fn find_equilibria(
    field: &CyclicVectorField,
    lo: &[f64],
    hi: &[f64],
    per_axis: usize,
    settings: &NewtonSettings,
) -> Result<EquilibriumSearch, CriticalError> {
    let n = field.n();
    if lo.len() != n || hi.len() != n || per_axis == 0 {
        return Err(CriticalError::InvalidArgument("search box must match the dimension and per_axis > 0".into()));
    }
    let starts = grid_points(lo, hi, per_axis);
    let roots: Vec<Option<Vec<f64>>> = starts.par_iter().map(|s| newton_equilibrium(field, s, settings)).collect();
    let slack = |i: usize| 1e-9 * (1.0 + lo[i].abs().max(hi[i].abs()));
    let mut found: Vec<Vec<f64>> = Vec::new();
    let (mut non_converged, mut outside_box) = (0, 0);
    for r in roots {
        let Some(x) = r else {
            non_converged += 1;
            continue;
        };
        if (0..n).any(|i| x[i] < lo[i] - slack(i) || x[i] > hi[i] + slack(i)) {
            outside_box += 1;
            continue;
        }
        if !found.iter().any(|y| linalg::dist(y, &x) <= dedup_radius(y)) {
            found.push(x);
        }
    }
    found.sort_by(|a, b| {
        a.iter().zip(b).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let equilibria =
        found.iter().map(|x| classify_equilibrium(field, x, settings.spectrum_tol)).collect::<Result<Vec<_>, _>>()?;
    Ok(EquilibriumSearch { equilibria, starts: starts.len(), non_converged, outside_box })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyClass {
    /// Sorted by decreasing modulus.
    #[serde(with = "complex_vec")]
    pub multipliers: Vec<Complex<f64>>,
    pub trivial_multiplier_error: f64,
    /// 1 is an algebraically simple multiplier.
    pub simple: bool,
    pub unique_unit_modulus: bool,
    pub hyperbolic: bool,
    /// Multipliers of modulus greater than one.
    pub morse_index: usize,
    /// Simple but some other multiplier sits on the unit circle.
    pub consistency_violation: bool,
    /// Angle between the eigenvector of the trivial multiplier and the
    /// vector field, when the latter was supplied.
    pub trivial_direction_angle: Option<f64>,
}

pub fn classify_monodromy(
    m: &DMatrix<f64>,
    field_direction: Option<&[f64]>,
    tol: f64,
) -> Result<MonodromyClass, CriticalError> {
    let n = m.nrows();
    let mut multipliers = RealSchur::new(m)?.eigenvalues();
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let one = Complex::new(1.0, 0.0);
    let near_one = multipliers.iter().filter(|z| (*z - one).norm() <= tol).count();
    let unit = multipliers.iter().filter(|z| (z.norm() - 1.0).abs() <= tol).count();
    let (k, trivial_multiplier_error) = multipliers
        .iter()
        .enumerate()
        .map(|(k, z)| (k, (z - one).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY));
    let simple = near_one == 1;
    let unique_unit_modulus = unit == 1;
    let trivial_direction_angle = match (field_direction, multipliers.get(k)) {
        (Some(f), Some(mu)) if f.len() == n && linalg::norm(f) > 0.0 => {
            let shifted = m - DMatrix::identity(n, n) * mu.re;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t.expect("requested");
            let j = (0..n).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap_or(0);
            let v: Vec<f64> = vt.row(j).iter().copied().collect();
            let c = (linalg::dot(&v, f) / (linalg::norm(&v) * linalg::norm(f))).abs().min(1.0);
            Some(c.acos())
        }
        _ => None,
    };
    Ok(MonodromyClass {
        morse_index: multipliers.iter().filter(|z| z.norm() > 1.0 + tol).count(),
        multipliers,
        trivial_multiplier_error,
        simple,
        unique_unit_modulus,
        hyperbolic: simple && unique_unit_modulus,
        consistency_violation: simple && !unique_unit_modulus,
        trivial_direction_angle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSettings {
    /// Time discarded before looking for the orbit.
    pub transient: f64,
    /// Length of the exploratory run used to build the section.
    pub explore: f64,
    /// Stored samples over one period.
    pub samples: usize,
    /// Newton threshold on the relative return error.
    pub newton_tol: f64,
    pub max_iter: usize,
    pub multiplier_tol: f64,
    /// Relative spread below which the exploratory run is declared stationary.
    pub equilibrium_spread: f64,
}

impl Default for OrbitSettings {
    fn default() -> Self {
        Self {
            transient: 200.0,
            explore: 100.0,
            samples: 1024,
            newton_tol: 1e-8,
            max_iter: 40,
            multiplier_tol: DEFAULT_MULTIPLIER_TOL,
            equilibrium_spread: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Fixed point of the return map.
    pub anchor: Vec<f64>,
    pub period: f64,
    pub section: SectionSpec,
    pub newton_iterations: usize,
    pub return_residual: f64,
    #[serde(with = "matrix_rows")]
    pub monodromy: DMatrix<f64>,
    pub classification: MonodromyClass,
    /// Uniform samples at `t = k T / samples`, `k < samples`.
    pub samples: Trajectory,
}

impl PeriodicOrbit {
    /// Orbit state at phase time `t`, wrapped into one period.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        self.samples.interpolate(t.rem_euclid(self.period))
    }
}

/// Time-average of a trajectory by the trapezoid rule.
fn time_mean(traj: &Trajectory) -> Vec<f64> {
    let n = traj.states[0].len();
    let mut acc = vec![0.0; n];
    let span = traj.t_max() - traj.t_min();
    if span <= 0.0 {
        return traj.states[0].clone();
    }
    for k in 1..traj.len() {
        let w = 0.5 * (traj.times[k] - traj.times[k - 1]);
        for i in 0..n {
            acc[i] += w * (traj.states[k - 1][i] + traj.states[k][i]);
        }
    }
    acc.iter().map(|v| v / span).collect()
}

/// Section through the time-mean with normal `f(mean)`; falls back to the
/// last point of the run when the field is negligible at the mean.
pub fn mean_section(field: &CyclicVectorField, traj: &Trajectory) -> Result<SectionSpec, CriticalError> {
    let mean = time_mean(traj);
    if field.domain().contains(&mean) {
        if let Ok(f) = field.evaluate(&mean) {
            let scale = traj.states.iter().filter_map(|s| field.evaluate(s).ok()).map(|v| v.norm()).fold(0.0, f64::max);
            if f.norm() > 1e-6 * scale.max(1e-300) {
                return Ok(SectionSpec::through(&mean, f.as_slice().to_vec(), CrossingDirection::Increasing)?);
            }
        }
    }
    let tail = traj.final_state().to_vec();
    let f = field.evaluate(&tail)?;
    Ok(SectionSpec::through(&tail, f.as_slice().to_vec(), CrossingDirection::Increasing)?)
}

struct ReturnEval {
    x_ret: Vec<f64>,
    tau: f64,
    phi: DMatrix<f64>,
}

fn first_return(
    field: &CyclicVectorField,
    x: &[f64],
    section: &SectionSpec,
    t_guess: f64,
    cfg: &IntegratorConfig,
) -> Result<ReturnEval, CriticalError> {
    let horizon = 3.0 * t_guess;
    let dense = IntegratorConfig { dense_output: true, ..*cfg };
    let traj = integrate(field, x, 0.0, horizon, &dense)?;
    let tau = traj
        .section_crossings(section, 1e-14 * (1.0 + linalg::norm(x)))
        .into_iter()
        .find(|c| c.t > 0.05 * t_guess)
        .map(|c| c.t)
        .ok_or(CriticalError::NoReturn { horizon })?;
    let (x_ret, phi) = flow_with_variation(field, x, tau, cfg)?;
    Ok(ReturnEval { x_ret, tau, phi })
}

/// Locates a periodic orbit by Newton iteration on the return map of a
/// section, after discarding a transient from `x0`.
pub fn find_periodic_orbit(
    field: &CyclicVectorField,
    x0: &[f64],
    section: Option<&SectionSpec>,
    cfg: &IntegratorConfig,
    settings: &OrbitSettings,
) -> Result<PeriodicOrbit, CriticalError> {
    let n = field.n();
    if x0.len() != n {
        return Err(CriticalError::Model(ModelError::DimensionMismatch { expected: n, got: x0.len() }));
    }
    if settings.samples < 8 {
        return Err(CriticalError::TooFewSamples { got: settings.samples, need: 8 });
    }
    let dense = IntegratorConfig { dense_output: true, ..*cfg };
    let start = if settings.transient > 0.0 {
        integrate(field, x0, 0.0, settings.transient, &cfg.without_dense())?.final_state().to_vec()
    } else {
        x0.to_vec()
    };
    let explore = integrate(field, &start, 0.0, settings.explore, &dense)?;
    let spread = (0..n)
        .map(|i| {
            let (lo, hi) =
                explore.states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(s[i]), h.max(s[i])));
            hi - lo
        })
        .fold(0.0, f64::max);
    if spread <= settings.equilibrium_spread * (1.0 + linalg::norm(explore.final_state())) {
        return Err(CriticalError::ConvergedToEquilibrium { x: explore.final_state().to_vec() });
    }
    let attempt = |section: &SectionSpec| {
        let crossings = explore.section_crossings(section, 1e-14);
        if crossings.len() < 2 {
            return Err(CriticalError::NoReturn { horizon: settings.explore });
        }
        let m = crossings.len();
        let t_guess = crossings[m - 1].t - crossings[m - 2].t;
        orbit_from_crossing(field, &crossings[m - 1].x, section, t_guess, cfg, settings)
    };
    if let Some(s) = section {
        return attempt(s);
    }
    match attempt(&mean_section(field, &explore)?) {
        Ok(o) => Ok(o),
        Err(first) => {
            // the mean section may cut the orbit twice per period; a section
            // through an orbit point normal to the flow is cut once nearby
            let last = explore.final_state();
            let f = field.evaluate(last)?;
            let local = SectionSpec::through(last, f.as_slice().to_vec(), CrossingDirection::Increasing)?;
            attempt(&local).map_err(|_| first)
        }
    }
}

/// Newton iteration on the return map of `section`, started from the
/// section point `p0` with return-time estimate `t_guess`.
pub fn orbit_from_crossing(
    field: &CyclicVectorField,
    p0: &[f64],
    section: &SectionSpec,
    t_guess: f64,
    cfg: &IntegratorConfig,
    settings: &OrbitSettings,
) -> Result<PeriodicOrbit, CriticalError> {
    let n = field.n();
    let section = section.clone();
    let mut t_guess = t_guess;
    // the return residual cannot drop below the integration error
    let cfg = &IntegratorConfig {
        rel_tol: cfg.rel_tol.min(1e-2 * settings.newton_tol),
        abs_tol: cfg.abs_tol.min(1e-4 * settings.newton_tol),
        ..*cfg
    };
    let dense = IntegratorConfig { dense_output: true, ..*cfg };
    let p0 = p0.to_vec();

    let normal = DMatrix::from_column_slice(n, 1, &section.normal);
    let basis = linalg::orth_complement(&linalg::orthonormalize(&normal));
    let p0v = DVector::from_column_slice(&p0);
    let mut z = DVector::<f64>::zeros(n - 1);
    let point = |z: &DVector<f64>| (&p0v + &basis * z).as_slice().to_vec();
    let residual = |x: &[f64], r: &ReturnEval| linalg::dist(x, &r.x_ret) / (1.0 + linalg::norm(x));

    let mut x = point(&z);
    let mut eval = first_return(field, &x, &section, t_guess, cfg)?;
    let mut res = residual(&x, &eval);
    let mut iterations = 0;
    while res > settings.newton_tol {
        if iterations >= settings.max_iter {
            return Err(CriticalError::NewtonDiverged { iterations, residual: res });
        }
        iterations += 1;
        t_guess = eval.tau;
        let fr = field.evaluate(&eval.x_ret)?;
        let nf = linalg::dot(&section.normal, fr.as_slice());
        if nf.abs() < 1e-300 {
            return Err(CriticalError::NewtonDiverged { iterations, residual: res });
        }
        let proj = DMatrix::identity(n, n) - &fr * normal.transpose() / nf;
        let jac = basis.transpose() * proj * &eval.phi * &basis - DMatrix::identity(n - 1, n - 1);
        let g = basis.transpose() * (DVector::from_column_slice(&eval.x_ret) - &p0v) - &z;
        let dz = solve_linear(&jac, &(-g)).ok_or(CriticalError::NewtonDiverged { iterations, residual: res })?;
        let mut lambda = 1.0;
        let mut next = None;
        for _ in 0..10 {
            let zt = &z + lambda * &dz;
            let xt = point(&zt);
            if let Ok(et) = first_return(field, &xt, &section, t_guess, cfg) {
                let rt = residual(&xt, &et);
                if rt < res || next.is_none() && lambda < 2e-3 {
                    next = Some((zt, xt, et, rt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((zt, xt, et, rt)) = next else {
            return Err(CriticalError::NewtonDiverged { iterations, residual: res });
        };
        z = zt;
        x = xt;
        eval = et;
        res = rt;
    }

    let period = eval.tau;
    let anchor = x;
    let orbit = integrate(field, &anchor, 0.0, period, &dense)?;
    let count = settings.samples;
    let times: Vec<f64> = (0..count).map(|k| period * k as f64 / count as f64).collect();
    let samples = orbit.sample_at(&times).expect("inside one period");
    let (_, monodromy) = flow_with_variation(field, &anchor, period, cfg)?;
    let f_anchor = field.evaluate(&anchor)?;
    let classification = classify_monodromy(&monodromy, Some(f_anchor.as_slice()), settings.multiplier_tol)?;
    Ok(PeriodicOrbit {
        anchor,
        period,
        section,
        newton_iterations: iterations,
        return_residual: res,
        monodromy,
        classification,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// 1-based coordinate: the projection is onto `(x_s, x_{s+1})`.
    pub s: usize,
    pub min_distance: f64,
    /// Sample indices realising the minimum.
    pub witness: (usize, usize),
    pub min_index_separation: usize,
}

/// Minimal distance between points of a closed planar curve sampled
/// uniformly in phase, over pairs at least `min_phase_sep` of a period apart.
pub fn planar_injectivity_samples(
    points: &[(f64, f64)],
    min_phase_sep: f64,
) -> Result<(f64, (usize, usize), usize), CriticalError> {
    let m = points.len();
    if m < 4 {
        return Err(CriticalError::TooFewSamples { got: m, need: 4 });
    }
    if !(0.0..=0.5).contains(&min_phase_sep) {
        return Err(CriticalError::InvalidArgument("min_phase_sep must lie in [0, 0.5]".into()));
    }
    let k_min = ((min_phase_sep * m as f64).ceil() as usize).max(1);
    let mut best = (f64::INFINITY, (0, 0));
    for a in 0..m {
        for b in a + k_min..m {
            if m - (b - a) < k_min {
                continue;
            }
            let d = (points[a].0 - points[b].0).hypot(points[a].1 - points[b].1);
            if d < best.0 {
                best = (d, (a, b));
            }
        }
    }
    Ok((best.0, best.1, k_min))
}

pub fn planar_projection_injectivity(
    orbit: &PeriodicOrbit,
    s: usize,
    min_phase_sep: f64,
) -> Result<InjectivityReport, CriticalError> {
    let n = orbit.anchor.len();
    if s == 0 || s > n {
        return Err(CriticalError::InvalidArgument(format!("projection index {s} outside 1..={n}")));
    }
    let (i, j) = (s - 1, s % n);
    let pts: Vec<(f64, f64)> = orbit.samples.states.iter().map(|x| (x[i], x[j])).collect();
    let (min_distance, witness, min_index_separation) = planar_injectivity_samples(&pts, min_phase_sep)?;
    Ok(InjectivityReport { s, min_distance, witness, min_index_separation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{goodwin, linear_cyclic};

    #[test]
    fn linear_cyclic_indices() {
        let f1 = linear_cyclic(3, 1.0, -1.0).unwrap();
        let e1 = classify_equilibrium(&f1, &[0.0; 3], DEFAULT_SPECTRUM_TOL).unwrap();
        assert_eq!(e1.morse_index, 0);
        assert!(e1.hyperbolic);
        let f3 = linear_cyclic(3, 3.0, -1.0).unwrap();
        let e3 = classify_equilibrium(&f3, &[0.0; 3], DEFAULT_SPECTRUM_TOL).unwrap();
        assert_eq!(e3.morse_index, 2);
        let f2 = linear_cyclic(3, 2.0, -1.0).unwrap();
        let e2 = classify_equilibrium(&f2, &[0.0; 3], DEFAULT_SPECTRUM_TOL).unwrap();
        assert!(!e2.hyperbolic && e2.simple);
        assert_eq!(morse_index_via_exponential(&e3.eigenvalues, 1e-12), 2);
    }

    #[test]
    fn monodromy_classes() {
        let c =
            classify_monodromy(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.1])), None, 1e-4).unwrap();
        assert!(c.simple && c.hyperbolic && !c.consistency_violation);
        assert_eq!(c.morse_index, 0);
        let d =
            classify_monodromy(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.1])), None, 1e-4).unwrap();
        assert!(!d.simple && !d.hyperbolic);
        let v =
            classify_monodromy(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 0.1])), None, 1e-4).unwrap();
        assert!(v.simple && v.consistency_violation);
    }

    #[test]
    fn circle_injectivity() {
        let m = 400;
        let pts: Vec<(f64, f64)> = (0..m)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / m as f64;
                (a.cos(), a.sin())
            })
            .collect();
        let (d, _, k) = planar_injectivity_samples(&pts, 0.05).unwrap();
        assert_eq!(k, 20);
        let chord = 2.0 * (std::f64::consts::PI * 20.0 / m as f64).sin();
        assert!((d - chord).abs() < 1e-12);
        // traversing the circle twice is not injective
        let twice: Vec<(f64, f64)> = (0..m)
            .map(|k| {
                let a = 2.0 * std::f64::consts::TAU * k as f64 / m as f64;
                (a.cos(), a.sin())
            })
            .collect();
        assert!(planar_injectivity_samples(&twice, 0.05).unwrap().0 < 1e-12);
    }

    #[test]
    fn goodwin_orbit() {
        let f = goodwin(24.0, 0.8).unwrap();
        let cfg = IntegratorConfig::default();
        let orbit = find_periodic_orbit(&f, &[0.5, 0.5, 0.5], None, &cfg, &OrbitSettings::default()).unwrap();
        let c = &orbit.classification;
        assert!(c.trivial_multiplier_error < 1e-4, "{c:?}");
        assert!(c.hyperbolic && c.morse_index == 0);
        assert!(c.trivial_direction_angle.unwrap() < 1e-3);
        for s in 1..=3 {
            assert!(planar_projection_injectivity(&orbit, s, 0.05).unwrap().min_distance > 0.0);
        }
        let again =
            find_periodic_orbit(&f, &orbit.anchor, None, &cfg, &OrbitSettings { transient: 0.0, ..Default::default() })
                .unwrap();
        assert!((again.period - orbit.period).abs() < 1e-6);
    }

    #[test]
    fn stable_focus_reports_equilibrium() {
        let f = linear_cyclic(3, 1.0, -1.0).unwrap();
        let err =
            find_periodic_orbit(&f, &[1.0, 0.0, 0.0], None, &IntegratorConfig::default(), &OrbitSettings::default());
        assert!(matches!(err, Err(CriticalError::ConvergedToEquilibrium { .. })));
    }

    #[test]
    fn goodwin_equilibrium_search() {
        let f = goodwin(24.0, 0.8).unwrap();
        let s = find_equilibria(&f, &[0.0; 3], &[3.0; 3], 4, &NewtonSettings::default()).unwrap();
        assert_eq!(s.equilibria.len(), 1);
        let e = &s.equilibria[0];
        assert_eq!(e.morse_index, 2);
        assert!(e.hyperbolic);
    }
}
