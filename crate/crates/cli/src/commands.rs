use feedback_lab_core::connect::bump_perturbation;
use feedback_lab_core::critical::{
    classify_equilibrium, find_periodic_orbit, planar_projection_injectivity, PeriodicOrbit,
};
use feedback_lab_core::floquet::{invariant_blocks, verify_block_nvalues, verify_cone_invariance, FloquetError};
use feedback_lab_core::integrate::integrate;
use feedback_lab_core::limitset::{robustness_probe, LimitKind};
use feedback_lab_core::lyapunov::{max_cone_index, n_value, ConeKind};
use feedback_lab_core::model::{check_class, check_dissipative, SampleSpec};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::error::{analysis, CliError};
use crate::pipeline::{self, Context, ElementRef};
use crate::report::{fmt_f64, Reporter};

pub fn check_class_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let c = &ctx.cfg.analysis.class_check;
    let samples = SampleSpec::random_in_domain(ctx.field.domain(), c.scale, c.samples, ctx.cfg.rng_seed);
    let mut report = check_class(&ctx.field, &samples);
    report.dissipative = Some(check_dissipative(&ctx.field, c.dissipative_radius, c.samples, ctx.cfg.rng_seed));
    rep.write_report("check-class", &report)?;
    Ok(())
}

pub fn simulate_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let s = &ctx.cfg.analysis.simulate;
    let x0 = match &s.x0 {
        Some(x) => x.clone(),
        None => ctx
            .initial_conditions()
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Config("no initial condition".into()))?,
    };
    if x0.len() != ctx.field.n() {
        return Err(CliError::Config(format!("x0 has length {}, model has dimension {}", x0.len(), ctx.field.n())));
    }
    let traj = integrate(&ctx.field, &x0, s.t0, s.t1, ctx.integrator()).map_err(analysis("integration"))?;
    let out = if s.samples > 1 { traj.resample(s.samples) } else { traj.clone() };
    rep.write_trajectory("simulate.trajectory.csv", &out)?;
    let sig = ctx.field.signature();
    let nvals: Vec<Option<usize>> = out
        .states
        .iter()
        .map(|x| {
            ctx.field
                .evaluate(x)
                .ok()
                .map(|f| n_value(f.as_slice(), sig, ctx.conv))
                .filter(|v| v.defined)
                .map(|v| v.value)
        })
        .collect();
    rep.write_report(
        "simulate",
        &json!({
            "x0": x0,
            "t0": s.t0,
            "t1": s.t1,
            "steps": traj.len(),
            "final_state": traj.final_state(),
            "n_of_derivative": nvals,
        }),
    )?;
    Ok(())
}

pub fn equilibria_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let s = ctx.equilibria()?;
    let n = ctx.field.n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["morse_index", "hyperbolic", "simple", "residual"].map(String::from));
    let rows: Vec<Vec<String>> = s
        .equilibria
        .iter()
        .map(|e| {
            let mut r: Vec<String> = e.x.iter().map(|v| fmt_f64(*v)).collect();
            r.extend([e.morse_index.to_string(), e.hyperbolic.to_string(), e.simple.to_string(), fmt_f64(e.residual)]);
            r
        })
        .collect();
    rep.write_csv("equilibria.csv", &header, &rows)?;
    rep.write_report("equilibria", &s)?;
    Ok(())
}

pub fn limits_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let eq = ctx.equilibria()?.equilibria;
    let known: Vec<Vec<f64>> = eq.iter().map(|e| e.x.clone()).collect();
    let limits = ctx.limit_sets(&known);
    let undetermined = limits.iter().filter(|(_, r)| !r.kind.is_determined()).count();
    let entries: Vec<Value> = limits.iter().map(|(x0, r)| json!({ "x0": x0, "report": r })).collect();
    rep.write_report(
        "limits",
        &json!({ "known_equilibria": known, "undetermined": undetermined, "entries": entries }),
    )?;
    Ok(())
}

fn cycles(ctx: &Context<'_>) -> Result<Vec<PeriodicOrbit>, CliError> {
    let eq = ctx.equilibria()?.equilibria;
    let known: Vec<Vec<f64>> = eq.iter().map(|e| e.x.clone()).collect();
    let limits = ctx.limit_sets(&known);
    let mut found = pipeline::distinct_cycles(&limits);
    if found.is_empty() {
        // limit-set sweeps found nothing; try the explicit orbit search once
        if let Some(x0) = ctx.initial_conditions().first() {
            if let Ok(o) = find_periodic_orbit(&ctx.field, x0, None, ctx.integrator(), &ctx.cfg.analysis.orbit) {
                found.push(o);
            }
        }
    }
    Ok(found)
}

pub fn cycles_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let found = cycles(ctx)?;
    let mut entries = Vec::new();
    for (k, o) in found.iter().enumerate() {
        rep.write_trajectory(&format!("cycle_{k}.csv"), &o.samples)?;
        let injectivity = (1..=ctx.field.n())
            .map(|s| planar_projection_injectivity(o, s, 0.05).map_err(analysis("injectivity")))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(json!({ "orbit": o, "planar_injectivity": injectivity }));
    }
    rep.write_report("cycles", &json!({ "count": found.len(), "orbits": entries }))?;
    Ok(())
}

fn floquet_entry(ctx: &Context<'_>, m: &DMatrix<f64>, seed: u64) -> Value {
    let gap_tol = ctx.cfg.analysis.gap_tol;
    match invariant_blocks(m, gap_tol) {
        Ok(d) => {
            let check =
                verify_block_nvalues(&d, ctx.field.signature(), ctx.conv, ctx.cfg.analysis.floquet.samples, seed);
            json!({ "decomposition": d.export(), "n_values": check })
        }
        Err(FloquetError::GapViolation(d)) => json!({ "error": "gap violation", "decomposition": d.export() }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn floquet_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let f = &ctx.cfg.analysis.floquet;
    let seed = ctx.cfg.rng_seed;
    let eq = ctx.equilibria()?.equilibria;
    let mut eq_entries = Vec::new();
    for e in &eq {
        let a = ctx.field.jacobian(&e.x).map_err(analysis("jacobian"))?;
        let m = (a * f.equilibrium_period).exp();
        eq_entries.push(json!({ "x": e.x, "period": f.equilibrium_period, "floquet": floquet_entry(ctx, &m, seed) }));
    }
    let mut orbit_entries = Vec::new();
    for o in cycles(ctx)? {
        let mut cones = Vec::new();
        for h in 1..=max_cone_index(ctx.field.n()) {
            let r = verify_cone_invariance(
                &ctx.field,
                &o.anchor,
                h,
                ConeKind::Lower,
                0.0,
                o.period,
                f.cone_samples,
                seed,
                ctx.conv,
                ctx.integrator(),
            );
            cones.push(match r {
                Ok(r) => serde_json::to_value(r).expect("serializable"),
                Err(e) => json!({ "h": h, "error": e.to_string() }),
            });
        }
        orbit_entries.push(json!({
            "anchor": o.anchor,
            "period": o.period,
            "floquet": floquet_entry(ctx, &o.monodromy, seed),
            "cones": cones,
        }));
    }
    rep.write_report("floquet", &json!({ "equilibria": eq_entries, "periodic_orbits": orbit_entries }))?;
    Ok(())
}

fn connection_rows(ctx: &Context<'_>, rep: &Reporter, analyze: bool, command: &str) -> Result<(), CliError> {
    let eq = ctx.equilibria()?.equilibria;
    let cyc = cycles(ctx)?;
    let sweep = pipeline::connection_sweep(ctx, &eq, &cyc, analyze)?;
    for (k, c) in sweep.connections.iter().enumerate() {
        rep.write_trajectory(&format!("connection_{k}.csv"), &c.orbit.trajectory)?;
    }
    let element = |r: &ElementRef| match r {
        ElementRef::Equilibrium(i) => eq[*i].x.clone(),
        ElementRef::PeriodicOrbit(i) => cyc[*i].anchor.clone(),
    };
    let targets: Vec<Vec<f64>> = sweep.connections.iter().map(|c| element(&c.target)).collect();
    rep.write_report(command, &json!({ "equilibria": eq, "cycle_anchors": cyc.iter().map(|c| &c.anchor).collect::<Vec<_>>(), "target_points": targets, "sweep": sweep }))?;
    Ok(())
}

pub fn connect_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    connection_rows(ctx, rep, false, "connect")
}

pub fn transversality_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    connection_rows(ctx, rep, true, "transversality")
}

pub fn perturb_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let p = &ctx.cfg.analysis.perturb;
    let n = ctx.field.n();
    if p.component == 0 || p.component > n {
        return Err(CliError::Config(format!("analysis.perturb.component must be in 1..={n}")));
    }
    let eq = ctx.equilibria()?.equilibria;
    let known: Vec<Vec<f64>> = eq.iter().map(|e| e.x.clone()).collect();
    let x0 = match &p.x0 {
        Some(x) => x.clone(),
        None => ctx
            .initial_conditions()
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Config("no initial condition".into()))?,
    };
    let th = &ctx.cfg.analysis.limits.thresholds;
    let center = match p.center {
        Some(c) => (c[0], c[1]),
        None => {
            let base = feedback_lab_core::limitset::classify_limit_set(
                &ctx.field,
                &x0,
                feedback_lab_core::limitset::Direction::Omega,
                th,
                &known,
                ctx.integrator(),
            );
            let pt = match &base.kind {
                LimitKind::Equilibrium { x, .. } => x.clone(),
                LimitKind::PeriodicOrbit { anchor, .. } => anchor.clone(),
                LimitKind::EquilibriaWithConnections { points, .. } => points[0].clone(),
                LimitKind::Undetermined { .. } => x0.clone(),
            };
            (pt[p.component - 1], pt[p.component % n])
        }
    };
    let bump = bump_perturbation(&ctx.field, p.component, center, p.radius).map_err(analysis("bump"))?;
    let c = &ctx.cfg.analysis.class_check;
    let samples = SampleSpec::random_in_domain(ctx.field.domain(), c.scale, c.samples, ctx.cfg.rng_seed);
    let r = robustness_probe(&ctx.field, &bump, &p.epsilons, &x0, th, &known, &samples, ctx.integrator())
        .map_err(analysis("robustness probe"))?;
    let rows: Vec<Vec<String>> = r.transition_rows().into_iter().map(|(e, s, k)| vec![fmt_f64(e), s, k]).collect();
    rep.write_csv("perturb.transitions.csv", &["epsilon".into(), "status".into(), "kind".into()], &rows)?;
    rep.write_report(
        "perturb",
        &json!({ "x0": x0, "bump_center": [center.0, center.1], "bump_component": p.component, "probe": r }),
    )?;
    Ok(())
}

pub fn census_cmd(ctx: &Context<'_>, rep: &Reporter) -> Result<(), CliError> {
    let c = pipeline::census(ctx)?;
    for (k, o) in c.periodic_orbits.iter().enumerate() {
        rep.write_trajectory(&format!("census_cycle_{k}.csv"), &o.samples)?;
    }
    let n = ctx.field.n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["morse_index", "hyperbolic"].map(String::from));
    let rows: Vec<Vec<String>> = c
        .equilibria
        .iter()
        .map(|e| {
            let mut r: Vec<String> = e.x.iter().map(|v| fmt_f64(*v)).collect();
            r.extend([e.morse_index.to_string(), e.hyperbolic.to_string()]);
            r
        })
        .collect();
    rep.write_csv("census.equilibria.csv", &header, &rows)?;
    rep.write_report("census", &c)?;
    Ok(())
}

/// Re-classifies an equilibrium for reports that only carry a point.
pub fn equilibrium_at(ctx: &Context<'_>, x: &[f64]) -> Result<Value, CliError> {
    let e = classify_equilibrium(&ctx.field, x, ctx.cfg.analysis.spectrum_tol).map_err(analysis("classification"))?;
    Ok(serde_json::to_value(e).expect("serializable"))
}
