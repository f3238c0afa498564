//! Analyses shared by several commands: equilibrium and cycle discovery,
//! limit-set sweeps, connection sweeps and the census verdict.

use feedback_lab_core::connect::{
    analyze_connection, automatic_transversality_check, distance_to_cycle, shoot_connections, ConnectingOrbit,
    DichotomyFrames, Endpoint, PredictionRecord, ShootSettings, Target, TransversalityReport,
};
use feedback_lab_core::critical::{find_equilibria, Equilibrium, EquilibriumSearch, PeriodicOrbit};
use feedback_lab_core::integrate::IntegratorConfig;
use feedback_lab_core::limitset::{classify_limit_set, LimitKind, LimitSetReport};
use feedback_lab_core::linalg;
use feedback_lab_core::lyapunov::NConvention;
use feedback_lab_core::model::{grid_points, CyclicVectorField};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{analysis, CliError};

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub field: CyclicVectorField,
    pub conv: NConvention,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        Ok(Self { field: cfg.build_model()?, conv: cfg.n_convention, cfg })
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.cfg.integrator
    }

    pub fn equilibria(&self) -> Result<EquilibriumSearch, CliError> {
        let b = self.cfg.search_box(&self.field);
        if b.lo.len() != self.field.n() {
            return Err(CliError::Config(format!(
                "search box has dimension {}, model has {}",
                b.lo.len(),
                self.field.n()
            )));
        }
        let settings = self.cfg.analysis.newton;
        let s = find_equilibria(&self.field, &b.lo, &b.hi, b.per_axis, &settings)
            .map_err(analysis("equilibrium search"))?;
        info!("{} equilibria from {} starts", s.equilibria.len(), s.starts);
        Ok(s)
    }

    pub fn initial_conditions(&self) -> Vec<Vec<f64>> {
        let l = &self.cfg.analysis.limits;
        if !l.initial_conditions.is_empty() {
            return l.initial_conditions.clone();
        }
        let b = self.cfg.search_box(&self.field);
        grid_points(&b.lo, &b.hi, l.grid_per_axis)
    }

    pub fn limit_sets(&self, known: &[Vec<f64>]) -> Vec<(Vec<f64>, LimitSetReport)> {
        let l = &self.cfg.analysis.limits;
        self.initial_conditions()
            .into_par_iter()
            .map(|x0| {
                let r = classify_limit_set(&self.field, &x0, l.direction, &l.thresholds, known, self.integrator());
                (x0, r)
            })
            .collect()
    }
}

/// Distinct periodic orbits among limit-set reports, in report order.
pub fn distinct_cycles(limits: &[(Vec<f64>, LimitSetReport)]) -> Vec<PeriodicOrbit> {
    let mut out: Vec<PeriodicOrbit> = Vec::new();
    for (_, r) in limits {
        let Some(orbit) = &r.orbit else { continue };
        let tol = 1e-4 * (1.0 + linalg::norm(&orbit.anchor));
        if !out.iter().any(|c| distance_to_cycle(c, &orbit.anchor) <= tol) {
            out.push((**orbit).clone());
        }
    }
    out
}

/// Index of the known cycle a limit set lies on.
pub fn matching_cycle(cycles: &[PeriodicOrbit], anchor: &[f64]) -> Option<usize> {
    let tol = 1e-4 * (1.0 + linalg::norm(anchor));
    cycles.iter().position(|c| distance_to_cycle(c, anchor) <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ElementRef {
    Equilibrium(usize),
    PeriodicOrbit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Frames computed and the tangent spaces span.
    Transverse,
    NotTransverse,
    /// A periodic endpoint: covered by the automatic transversality criterion,
    /// frames are not computed.
    PredictedTransverse,
    Unresolved,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionRecord {
    pub source: usize,
    pub target: ElementRef,
    pub i_minus: usize,
    pub i_plus: usize,
    pub hits: usize,
    pub attempts: usize,
    pub half_window: f64,
    pub convergence_errors: [f64; 2],
    pub n_minus: Option<usize>,
    pub n_plus: Option<usize>,
    pub prediction: PredictionRecord,
    pub transversality: Option<TransversalityReport>,
    pub frames: Option<DichotomyFrames>,
    pub refined: bool,
    pub error: Option<String>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub orbit: ConnectingOrbit,
}

#[derive(Debug, Clone, Serialize)]
pub struct NotableFinding {
    pub source: usize,
    pub target: usize,
    pub index: usize,
    pub hits: usize,
    pub final_distance: f64,
    /// Still a hit at ten times tighter tolerances.
    pub confirmed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct HomoindexedSweep {
    pub pairs: usize,
    pub attempts: usize,
    pub findings: Vec<NotableFinding>,
}

impl HomoindexedSweep {
    pub fn confirmed(&self) -> usize {
        self.findings.iter().filter(|f| f.confirmed).count()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionSweep {
    pub sources: usize,
    pub pairs_attempted: usize,
    pub connections: Vec<ConnectionRecord>,
    pub homoindexed: HomoindexedSweep,
    pub skipped_sources: Vec<(usize, String)>,
}

fn is_homoindexed(a: &Equilibrium, b: &Equilibrium) -> bool {
    a.morse_index == b.morse_index && a.morse_index % 2 == 1
}

fn tightened(settings: &ShootSettings, cfg: &IntegratorConfig) -> (ShootSettings, IntegratorConfig) {
    let s = ShootSettings { conv_tol: settings.conv_tol / 10.0, radius: settings.radius / 10.0, ..*settings };
    let c =
        IntegratorConfig { rel_tol: (cfg.rel_tol / 10.0).max(1e-14), abs_tol: (cfg.abs_tol / 10.0).max(1e-16), ..*cfg };
    (s, c)
}

/// Shoots from every hyperbolic equilibrium of positive index toward every
/// hyperbolic critical element of lower index, and toward other equilibria
/// of the same odd index.
pub fn connection_sweep(
    ctx: &Context<'_>,
    equilibria: &[Equilibrium],
    cycles: &[PeriodicOrbit],
    analyze: bool,
) -> Result<ConnectionSweep, CliError> {
    let a = &ctx.cfg.analysis;
    let settings = ShootSettings { seed: a.shoot.seed ^ ctx.cfg.rng_seed, ..a.shoot };
    let cfg = ctx.integrator();
    let mut sweep = ConnectionSweep {
        sources: 0,
        pairs_attempted: 0,
        connections: Vec::new(),
        homoindexed: HomoindexedSweep::default(),
        skipped_sources: Vec::new(),
    };
    for (si, src) in equilibria.iter().enumerate() {
        if !src.hyperbolic || src.morse_index == 0 {
            continue;
        }
        let mut refs = Vec::new();
        let mut targets = Vec::new();
        for (ti, t) in equilibria.iter().enumerate() {
            if ti != si && t.hyperbolic && (t.morse_index < src.morse_index || is_homoindexed(src, t)) {
                refs.push(ElementRef::Equilibrium(ti));
                targets.push(Target::Equilibrium(t));
            }
        }
        for (ci, c) in cycles.iter().enumerate() {
            if c.classification.hyperbolic && c.classification.morse_index < src.morse_index {
                refs.push(ElementRef::PeriodicOrbit(ci));
                targets.push(Target::Orbit(c));
            }
        }
        if targets.is_empty() {
            continue;
        }
        sweep.sources += 1;
        sweep.pairs_attempted += targets.len();
        let reports = match shoot_connections(&ctx.field, src, &targets, &settings, ctx.conv, cfg) {
            Ok(r) => r,
            Err(e) => {
                sweep.skipped_sources.push((si, e.to_string()));
                continue;
            }
        };
        debug!("source {si}: {} targets", targets.len());
        for ((r, target), tref) in reports.into_iter().zip(&targets).zip(&refs) {
            if let (ElementRef::Equilibrium(ti), Target::Equilibrium(t)) = (tref, target) {
                if is_homoindexed(src, t) {
                    sweep.homoindexed.pairs += 1;
                    sweep.homoindexed.attempts += r.attempts;
                    if r.hits > 0 {
                        let (ts, tc) = tightened(&settings, cfg);
                        let recheck = shoot_connections(&ctx.field, src, &[*target], &ts, ctx.conv, &tc)
                            .map(|mut v| v.remove(0).hits > 0)
                            .unwrap_or(false);
                        let final_distance = r.orbits.first().map_or(f64::NAN, |o| o.convergence_errors[1]);
                        sweep.homoindexed.findings.push(NotableFinding {
                            source: si,
                            target: *ti,
                            index: src.morse_index,
                            hits: r.hits,
                            final_distance,
                            confirmed: recheck,
                        });
                    }
                    continue;
                }
            }
            let Some(orbit) = r.orbits.into_iter().next() else { continue };
            sweep.connections.push(record(ctx, si, *tref, r.hits, r.attempts, orbit, analyze));
        }
    }
    Ok(sweep)
}

fn record(
    ctx: &Context<'_>,
    source: usize,
    target: ElementRef,
    hits: usize,
    attempts: usize,
    orbit: ConnectingOrbit,
    analyze: bool,
) -> ConnectionRecord {
    let a = &ctx.cfg.analysis;
    let both_eq = matches!(orbit.e_plus, Endpoint::Equilibrium { .. });
    let (prediction, transversality, frames, refined, error) = if analyze && both_eq {
        let an = analyze_connection(&ctx.field, &orbit, a.angle_tol, a.spectrum_tol, ctx.integrator());
        (an.record, an.report, an.frames, an.refined, an.error)
    } else {
        (automatic_transversality_check(&orbit, ctx.field.n()), None, None, false, None)
    };
    let verdict = match (&transversality, both_eq) {
        (Some(r), _) if r.transverse => Verdict::Transverse,
        (Some(_), _) => Verdict::NotTransverse,
        (None, false) => Verdict::PredictedTransverse,
        (None, true) => Verdict::Unresolved,
    };
    ConnectionRecord {
        source,
        target,
        i_minus: orbit.i_minus,
        i_plus: orbit.i_plus,
        hits,
        attempts,
        half_window: orbit.half_window,
        convergence_errors: orbit.convergence_errors,
        n_minus: orbit.n_minus,
        n_plus: orbit.n_plus,
        prediction,
        transversality,
        frames,
        refined,
        error,
        verdict,
        orbit,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitSummary {
    pub x0: Vec<f64>,
    pub kind: String,
    pub element: Option<ElementRef>,
    pub report: LimitSetReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonwanderingSummary {
    pub classified: usize,
    pub undetermined: usize,
    /// Every determined limit set lies on a critical element found by the census.
    pub all_referenced: bool,
    pub unreferenced: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "items")]
pub enum MorseSmaleVerdict {
    ConsistentWithMorseSmale,
    Violations(Vec<String>),
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusReport {
    pub equilibria: Vec<Equilibrium>,
    pub periodic_orbits: Vec<PeriodicOrbit>,
    pub hyperbolic_fraction: f64,
    pub limit_sets: Vec<LimitSummary>,
    pub connections: Vec<ConnectionRecord>,
    pub homoindexed_sweep: HomoindexedSweep,
    pub nonwandering_summary: NonwanderingSummary,
    pub morse_smale_verdict: MorseSmaleVerdict,
}

pub fn census(ctx: &Context<'_>) -> Result<CensusReport, CliError> {
    let eq = ctx.equilibria()?.equilibria;
    let known: Vec<Vec<f64>> = eq.iter().map(|e| e.x.clone()).collect();
    let limits = ctx.limit_sets(&known);
    let cycles = distinct_cycles(&limits);
    let sweep = connection_sweep(ctx, &eq, &cycles, true)?;

    let mut summaries = Vec::new();
    let mut unreferenced = Vec::new();
    let mut undetermined = 0;
    for (x0, r) in &limits {
        let element = match &r.kind {
            LimitKind::Equilibrium { known_index, .. } => known_index.map(ElementRef::Equilibrium),
            LimitKind::PeriodicOrbit { anchor, .. } => matching_cycle(&cycles, anchor).map(ElementRef::PeriodicOrbit),
            LimitKind::EquilibriaWithConnections { points, known_indices } => {
                (known_indices.len() == points.len()).then(|| ElementRef::Equilibrium(known_indices[0]))
            }
            LimitKind::Undetermined { .. } => None,
        };
        if !r.kind.is_determined() {
            undetermined += 1;
        } else if element.is_none() {
            unreferenced.push(x0.clone());
        }
        summaries.push(LimitSummary { x0: x0.clone(), kind: r.kind.label().into(), element, report: r.clone() });
    }
    let nonwandering = NonwanderingSummary {
        classified: limits.len() - undetermined,
        undetermined,
        all_referenced: unreferenced.is_empty(),
        unreferenced,
    };

    let total = eq.len() + cycles.len();
    let hyperbolic =
        eq.iter().filter(|e| e.hyperbolic).count() + cycles.iter().filter(|c| c.classification.hyperbolic).count();
    let mut violations = Vec::new();
    for (i, e) in eq.iter().enumerate() {
        if !e.hyperbolic {
            violations.push(format!("equilibrium {i} is not hyperbolic"));
        }
    }
    for (i, c) in cycles.iter().enumerate() {
        if !c.classification.hyperbolic {
            violations.push(format!("periodic orbit {i} is not hyperbolic"));
        }
    }
    for c in &sweep.connections {
        match c.verdict {
            Verdict::NotTransverse => {
                violations.push(format!("connection {} -> {:?} is not transverse", c.source, c.target))
            }
            Verdict::Unresolved => {
                violations.push(format!("connection {} -> {:?} could not be resolved", c.source, c.target))
            }
            _ => {}
        }
    }
    for f in sweep.homoindexed.findings.iter().filter(|f| f.confirmed) {
        violations.push(format!("connection between equal odd index equilibria {} -> {}", f.source, f.target));
    }
    if undetermined > 0 {
        violations.push(format!("{undetermined} limit sets undetermined"));
    }
    if !nonwandering.all_referenced {
        violations.push(format!("{} limit sets not on a found critical element", nonwandering.unreferenced.len()));
    }
    let verdict = if violations.is_empty() {
        MorseSmaleVerdict::ConsistentWithMorseSmale
    } else {
        MorseSmaleVerdict::Violations(violations)
    };
    Ok(CensusReport {
        equilibria: eq,
        periodic_orbits: cycles,
        hyperbolic_fraction: if total == 0 { 1.0 } else { hyperbolic as f64 / total as f64 },
        limit_sets: summaries,
        connections: sweep.connections,
        homoindexed_sweep: sweep.homoindexed,
        nonwandering_summary: nonwandering,
        morse_smale_verdict: verdict,
    })
}
