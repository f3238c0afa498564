//! Classification of omega- and alpha-limit sets and the robustness probe
//! under small perturbations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::{
    mean_section, newton_equilibrium, orbit_from_crossing, NewtonSettings, OrbitSettings, PeriodicOrbit,
};
use crate::integrate::{integrate, CrossingDirection, IntegratorConfig, SectionSpec, Trajectory};
use crate::linalg;
use crate::model::{check_class, CyclicVectorField, ModelError, SampleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Omega,
    Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub eq_radius: f64,
    pub rec_tol: f64,
    pub horizon: f64,
    /// Fraction of the run treated as the tail.
    pub tail_fraction: f64,
    /// Radius of the balls counted as visits to an equilibrium.
    pub visit_radius: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { eq_radius: 1e-5, rec_tol: 1e-5, horizon: 1e3, tail_fraction: 0.1, visit_radius: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LimitKind {
    Equilibrium {
        x: Vec<f64>,
        /// Position in the supplied list of known equilibria.
        known_index: Option<usize>,
    },
    PeriodicOrbit {
        period: f64,
        anchor: Vec<f64>,
    },
    /// Alternating visits to equilibria; a heuristic reading.
    EquilibriaWithConnections {
        points: Vec<Vec<f64>>,
        known_indices: Vec<usize>,
    },
    Undetermined {
        reason: String,
    },
}

impl LimitKind {
    pub fn label(&self) -> &'static str {
        match self {
            LimitKind::Equilibrium { .. } => "Equilibrium",
            LimitKind::PeriodicOrbit { .. } => "PeriodicOrbit",
            LimitKind::EquilibriaWithConnections { .. } => "EquilibriaWithConnections",
            LimitKind::Undetermined { .. } => "Undetermined",
        }
    }

    pub fn is_determined(&self) -> bool {
        !matches!(self, LimitKind::Undetermined { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    /// Largest tail distance to the equilibrium, when one was tested.
    pub final_distance: Option<f64>,
    /// Distance between the last two section returns.
    pub recurrence_gap: Option<f64>,
    pub visited_equilibria: Vec<usize>,
    pub horizon_used: f64,
    pub heuristic: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSetReport {
    pub direction: Direction,
    pub kind: LimitKind,
    pub evidence: Evidence,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orbit: Option<Box<PeriodicOrbit>>,
}

fn undetermined(direction: Direction, reason: String, evidence: Evidence) -> LimitSetReport {
    LimitSetReport { direction, kind: LimitKind::Undetermined { reason }, evidence, orbit: None }
}

/// Runs the classification cascade on `x0`.
pub fn classify_limit_set(
    field: &CyclicVectorField,
    x0: &[f64],
    direction: Direction,
    thresholds: &Thresholds,
    known_equilibria: &[Vec<f64>],
    cfg: &IntegratorConfig,
) -> LimitSetReport {
    let mut evidence = Evidence::default();
    let t_end = match direction {
        Direction::Omega => thresholds.horizon,
        Direction::Alpha => -thresholds.horizon,
    };
    let dense = IntegratorConfig { dense_output: true, ..*cfg };
    let traj = match integrate(field, x0, 0.0, t_end, &dense) {
        Ok(t) => t,
        Err(e) => {
            evidence.horizon_used = e.partial().map_or(0.0, |p| p.final_time().abs());
            evidence.failure = Some(e.kind().to_string());
            return undetermined(direction, format!("integration failed: {e}"), evidence);
        }
    };
    evidence.horizon_used = thresholds.horizon;
    if traj.len() < 2 {
        return undetermined(direction, "trajectory too short".into(), evidence);
    }
    let (window, tail) = tail_of(&traj, thresholds.tail_fraction);
    let last = tail.final_state().to_vec();

    // (1) a single equilibrium
    let candidate = known_equilibria
        .iter()
        .enumerate()
        .map(|(k, e)| (Some(k), e.clone(), linalg::dist(e, &last)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .filter(|c| c.2 <= thresholds.eq_radius)
        .or_else(|| {
            newton_equilibrium(field, &last, &NewtonSettings::default()).map(|e| {
                let d = linalg::dist(&e, &last);
                let k = known_equilibria.iter().position(|q| linalg::dist(q, &e) <= crate::critical::dedup_radius(q));
                (k, e, d)
            })
        });
    if let Some((k, e, _)) = &candidate {
        let worst = tail.states.iter().map(|s| linalg::dist(s, e)).fold(0.0, f64::max);
        evidence.final_distance = Some(worst);
        if worst <= thresholds.eq_radius {
            return LimitSetReport {
                direction,
                kind: LimitKind::Equilibrium { x: e.clone(), known_index: *k },
                evidence,
                orbit: None,
            };
        }
    }

    // (2) a closed orbit; the mean section can cut a curved orbit twice
    // per period, so a section through the last tail point is tried next
    let mut orbit_failure = None;
    let mut sections = Vec::new();
    if let Ok(s) = mean_section(field, &tail) {
        sections.push(s);
    }
    if let Ok(f) = field.evaluate(&last) {
        if let Ok(s) = SectionSpec::through(&last, f.as_slice().to_vec(), CrossingDirection::Increasing) {
            sections.push(s);
        }
    }
    for section in &sections {
        let crossings: Vec<_> =
            traj.section_crossings(section, 1e-14).into_iter().filter(|c| c.t >= window.0 && c.t <= window.1).collect();
        let m = crossings.len();
        if m < 2 {
            continue;
        }
        let gap = linalg::dist(&crossings[m - 1].x, &crossings[m - 2].x);
        evidence.recurrence_gap = Some(evidence.recurrence_gap.map_or(gap, |g: f64| g.min(gap)));
        if gap > thresholds.rec_tol * (1.0 + linalg::norm(&crossings[m - 1].x)) {
            continue;
        }
        let t_guess = crossings[m - 1].t - crossings[m - 2].t;
        let settings = OrbitSettings { transient: 0.0, ..OrbitSettings::default() };
        match orbit_from_crossing(field, &crossings[m - 1].x, section, t_guess, cfg, &settings) {
            Ok(orbit) => {
                return LimitSetReport {
                    direction,
                    kind: LimitKind::PeriodicOrbit { period: orbit.period, anchor: orbit.anchor.clone() },
                    evidence,
                    orbit: Some(Box::new(orbit)),
                };
            }
            Err(e) => orbit_failure = Some(e.to_string()),
        }
    }

    // (3) alternating visits to known equilibria
    let visits = visit_sequence(&tail, known_equilibria, thresholds.visit_radius);
    let mut visited: Vec<usize> = visits.clone();
    visited.sort_unstable();
    visited.dedup();
    evidence.visited_equilibria = visited.clone();
    if visits.len() >= 2 {
        evidence.heuristic = true;
        return LimitSetReport {
            direction,
            kind: LimitKind::EquilibriaWithConnections {
                points: visited.iter().map(|&k| known_equilibria[k].clone()).collect(),
                known_indices: visited,
            },
            evidence,
            orbit: None,
        };
    }
    evidence.failure = orbit_failure;
    undetermined(direction, "no classification criterion met".into(), evidence)
}

/// Final `fraction` of the run in integration order, as a chronological
/// time window and the samples inside it.
fn tail_of(traj: &Trajectory, fraction: f64) -> ((f64, f64), Trajectory) {
    let (a, b) = (traj.t_min(), traj.t_max());
    let w = (b - a) * fraction.clamp(0.0, 1.0);
    let window = if traj.direction >= 0 { (b - w, b) } else { (a, a + w) };
    let mut idx: Vec<usize> =
        (0..traj.len()).filter(|&k| traj.times[k] >= window.0 && traj.times[k] <= window.1).collect();
    if idx.len() < 2 {
        idx = if traj.direction >= 0 { vec![traj.len() - 2, traj.len() - 1] } else { vec![0, 1] };
    }
    let mut t = Trajectory::from_samples(
        idx.iter().map(|&k| traj.times[k]).collect(),
        idx.iter().map(|&k| traj.states[k].clone()).collect(),
    );
    t.direction = traj.direction;
    (window, t)
}

/// Sequence of equilibria entered by the tail (in chronological order),
/// counting a new visit only after an excursion outside every ball.
fn visit_sequence(tail: &Trajectory, known: &[Vec<f64>], radius: f64) -> Vec<usize> {
    let mut seq = Vec::new();
    let mut inside: Option<usize> = None;
    for s in &tail.states {
        let near = known.iter().position(|e| linalg::dist(e, s) <= radius);
        match (inside, near) {
            (None, Some(k)) => {
                seq.push(k);
                inside = Some(k);
            }
            (Some(_), None) => inside = None,
            (Some(a), Some(b)) if a != b => {
                seq.push(b);
                inside = Some(b);
            }
            _ => {}
        }
    }
    seq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Classified {
        report: LimitSetReport,
    },
    /// The perturbed field failed the class check; nothing is claimed.
    LeftClass {
        failures: usize,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub epsilon: f64,
    pub outcome: ProbeOutcome,
    /// Same kind as the unperturbed classification.
    pub same_kind: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub base: LimitSetReport,
    pub entries: Vec<ProbeEntry>,
    /// Smallest tested epsilon at which the kind changed.
    pub first_transition: Option<f64>,
}

impl RobustnessReport {
    pub fn transition_rows(&self) -> Vec<(f64, String, String)> {
        self.entries
            .iter()
            .map(|e| match &e.outcome {
                ProbeOutcome::Classified { report } => (e.epsilon, "classified".into(), report.kind.label().into()),
                ProbeOutcome::LeftClass { .. } => (e.epsilon, "left_class".into(), String::new()),
            })
            .collect()
    }
}

/// Classifies the omega-limit set of `x0` under `f + eps g` for each `eps`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_probe(
    field: &CyclicVectorField,
    bump: &CyclicVectorField,
    epsilons: &[f64],
    x0: &[f64],
    thresholds: &Thresholds,
    known_equilibria: &[Vec<f64>],
    class_samples: &SampleSpec,
    cfg: &IntegratorConfig,
) -> Result<RobustnessReport, ModelError> {
    let base = classify_limit_set(field, x0, Direction::Omega, thresholds, known_equilibria, cfg);
    let fields = epsilons
        .iter()
        .map(|&eps| if eps == 0.0 { Ok(field.clone()) } else { field.add_scaled(eps, bump) })
        .collect::<Result<Vec<_>, _>>()?;
    let entries: Vec<ProbeEntry> = epsilons
        .par_iter()
        .zip(fields.par_iter())
        .map(|(&epsilon, f)| {
            let class = check_class(f, class_samples);
            if !class.in_lminus {
                return ProbeEntry {
                    epsilon,
                    outcome: ProbeOutcome::LeftClass { failures: class.failures.len(), samples: class.samples },
                    same_kind: None,
                };
            }
            let report = if epsilon == 0.0 {
                base.clone()
            } else {
                classify_limit_set(f, x0, Direction::Omega, thresholds, known_equilibria, cfg)
            };
            let same = report.kind.label() == base.kind.label();
            ProbeEntry { epsilon, outcome: ProbeOutcome::Classified { report }, same_kind: Some(same) }
        })
        .collect();
    let first_transition = entries
        .iter()
        .filter(|e| e.same_kind == Some(false))
        .map(|e| e.epsilon)
        .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e.abs(), |a| a.min(e.abs()))));
    Ok(RobustnessReport { base, entries, first_transition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bidirectional_synthetic, goodwin, linear_cyclic, SyntheticParams};

    #[test]
    fn stable_linear_goes_to_origin() {
        let f = linear_cyclic(3, 1.0, -1.0).unwrap();
        let r = classify_limit_set(
            &f,
            &[1.0, -2.0, 0.5],
            Direction::Omega,
            &Thresholds::default(),
            &[vec![0.0; 3]],
            &IntegratorConfig::default(),
        );
        assert_eq!(r.kind, LimitKind::Equilibrium { x: vec![0.0; 3], known_index: Some(0) });
    }

    #[test]
    fn goodwin_omega_and_alpha() {
        let f = goodwin(24.0, 0.8).unwrap();
        let cfg = IntegratorConfig::default();
        let th = Thresholds::default();
        let r = classify_limit_set(&f, &[0.5, 0.5, 0.5], Direction::Omega, &th, &[], &cfg);
        assert_eq!(r.kind.label(), "PeriodicOrbit", "{r:?}");
        // off the unstable focus the strong stable direction blows up in
        // backward time
        let e = newton_equilibrium(&f, &[0.6, 0.8, 1.0], &NewtonSettings::default()).unwrap();
        let x0: Vec<f64> = e.iter().map(|v| v + 1e-3).collect();
        let a = classify_limit_set(&f, &x0, Direction::Alpha, &th, &[e], &cfg);
        assert_eq!(a.evidence.failure.as_deref(), Some("LeftDomain"));
    }

    #[test]
    fn repelling_origin_is_alpha_limit() {
        let f = bidirectional_synthetic(3, SyntheticParams::bistable3()).unwrap();
        let r = classify_limit_set(
            &f,
            &[0.01, -0.02, 0.015],
            Direction::Alpha,
            &Thresholds::default(),
            &[vec![0.0; 3]],
            &IntegratorConfig::default(),
        );
        assert_eq!(r.kind, LimitKind::Equilibrium { x: vec![0.0; 3], known_index: Some(0) });
    }

    #[test]
    fn visits_need_excursions() {
        let known = vec![vec![0.0], vec![1.0]];
        let states: Vec<Vec<f64>> = [0.0, 0.001, 0.5, 0.999, 0.5, 0.0].iter().map(|&v| vec![v]).collect();
        let t = Trajectory::from_samples((0..states.len()).map(|k| k as f64).collect(), states);
        assert_eq!(visit_sequence(&t, &known, 0.01), vec![0, 1, 0]);
    }
}
