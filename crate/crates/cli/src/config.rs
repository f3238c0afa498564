use std::path::{Path, PathBuf};

use feedback_lab_core::connect::{ShootSettings, DEFAULT_ANGLE_TOL};
use feedback_lab_core::critical::{NewtonSettings, OrbitSettings, DEFAULT_MULTIPLIER_TOL, DEFAULT_SPECTRUM_TOL};
use feedback_lab_core::floquet::DEFAULT_GAP_TOL;
use feedback_lab_core::integrate::IntegratorConfig;
use feedback_lab_core::limitset::{Direction, Thresholds};
use feedback_lab_core::lyapunov::NConvention;
use feedback_lab_core::model::{CyclicVectorField, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub n_convention: NConvention,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub spectrum_tol: f64,
    pub multiplier_tol: f64,
    pub angle_tol: f64,
    pub gap_tol: f64,
    /// Box swept for equilibria and initial conditions; derived from the
    /// model domain when absent.
    pub search_box: Option<SearchBox>,
    pub class_check: ClassCheckSettings,
    pub newton: NewtonSettings,
    pub orbit: OrbitSettings,
    pub limits: LimitSettings,
    pub shoot: ShootSettings,
    pub simulate: SimulateSettings,
    pub floquet: FloquetSettings,
    pub perturb: PerturbSettings,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            spectrum_tol: DEFAULT_SPECTRUM_TOL,
            multiplier_tol: DEFAULT_MULTIPLIER_TOL,
            angle_tol: DEFAULT_ANGLE_TOL,
            gap_tol: DEFAULT_GAP_TOL,
            search_box: None,
            class_check: ClassCheckSettings::default(),
            newton: NewtonSettings::default(),
            orbit: OrbitSettings::default(),
            limits: LimitSettings::default(),
            shoot: ShootSettings::default(),
            simulate: SimulateSettings::default(),
            floquet: FloquetSettings::default(),
            perturb: PerturbSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "default_per_axis")]
    pub per_axis: usize,
}

fn default_per_axis() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassCheckSettings {
    pub samples: usize,
    /// Sample coordinates are clipped to `[-scale, scale]`.
    pub scale: f64,
    pub dissipative_radius: f64,
}

impl Default for ClassCheckSettings {
    fn default() -> Self {
        Self { samples: 500, scale: 3.0, dissipative_radius: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSettings {
    pub thresholds: Thresholds,
    pub direction: Direction,
    /// Explicit initial conditions; the search box grid is used when empty.
    pub initial_conditions: Vec<Vec<f64>>,
    pub grid_per_axis: usize,
}

impl Default for LimitSettings {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            direction: Direction::Omega,
            initial_conditions: Vec::new(),
            grid_per_axis: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub x0: Option<Vec<f64>>,
    pub t0: f64,
    pub t1: f64,
    /// Uniform resampling of the exported trajectory; 0 keeps the steps.
    pub samples: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self { x0: None, t0: 0.0, t1: 100.0, samples: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloquetSettings {
    /// Random vectors drawn per block and per block sum.
    pub samples: usize,
    /// Cone vectors propagated per cone.
    pub cone_samples: usize,
    /// Time step of the solution operator used at equilibria.
    pub equilibrium_period: f64,
}

impl Default for FloquetSettings {
    fn default() -> Self {
        Self { samples: 200, cone_samples: 200, equilibrium_period: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSettings {
    /// 1-based component carrying the bump.
    pub component: usize,
    /// Centre in `(x_j, x_{j+1})`; the first limit point when absent.
    pub center: Option<[f64; 2]>,
    pub radius: f64,
    pub epsilons: Vec<f64>,
    pub x0: Option<Vec<f64>>,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        Self { component: 1, center: None, radius: 0.1, epsilons: vec![0.0, 1e-4, 1e-3, 1e-2], x0: None }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn build_model(&self) -> Result<CyclicVectorField, CliError> {
        self.model.build().map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// Search box from the config, or a default clipped to the domain.
    pub fn search_box(&self, field: &CyclicVectorField) -> SearchBox {
        if let Some(b) = &self.analysis.search_box {
            return b.clone();
        }
        let d = field.domain();
        let lo = d.lo.iter().map(|&l| if l.is_finite() { l + 1e-3 } else { -2.0 }).collect();
        let hi =
            d.hi.iter()
                .zip(&d.lo)
                .map(|(&h, &l)| {
                    if h.is_finite() {
                        h - 1e-3
                    } else if l.is_finite() {
                        l + 3.0
                    } else {
                        2.0
                    }
                })
                .collect();
        SearchBox { lo, hi, per_axis: default_per_axis() }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.integrator.validate().map_err(|e| CliError::Config(format!("integrator: {e}")))?;
        let a = &self.analysis;
        let positive = [
            ("analysis.spectrum_tol", a.spectrum_tol),
            ("analysis.multiplier_tol", a.multiplier_tol),
            ("analysis.angle_tol", a.angle_tol),
            ("analysis.gap_tol", a.gap_tol),
            ("analysis.class_check.scale", a.class_check.scale),
            ("analysis.class_check.dissipative_radius", a.class_check.dissipative_radius),
            ("analysis.newton.tol", a.newton.tol),
            ("analysis.newton.spectrum_tol", a.newton.spectrum_tol),
            ("analysis.orbit.newton_tol", a.orbit.newton_tol),
            ("analysis.orbit.multiplier_tol", a.orbit.multiplier_tol),
            ("analysis.orbit.explore", a.orbit.explore),
            ("analysis.orbit.equilibrium_spread", a.orbit.equilibrium_spread),
            ("analysis.limits.thresholds.eq_radius", a.limits.thresholds.eq_radius),
            ("analysis.limits.thresholds.rec_tol", a.limits.thresholds.rec_tol),
            ("analysis.limits.thresholds.horizon", a.limits.thresholds.horizon),
            ("analysis.limits.thresholds.tail_fraction", a.limits.thresholds.tail_fraction),
            ("analysis.limits.thresholds.visit_radius", a.limits.thresholds.visit_radius),
            ("analysis.shoot.radius", a.shoot.radius),
            ("analysis.shoot.horizon", a.shoot.horizon),
            ("analysis.shoot.conv_tol", a.shoot.conv_tol),
            ("analysis.shoot.spectrum_tol", a.shoot.spectrum_tol),
            ("analysis.floquet.equilibrium_period", a.floquet.equilibrium_period),
            ("analysis.perturb.radius", a.perturb.radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if a.limits.thresholds.tail_fraction >= 1.0 {
            return Err(CliError::Config("analysis.limits.thresholds.tail_fraction must be below 1".into()));
        }
        if a.shoot.directions == 0 {
            return Err(CliError::Config("analysis.shoot.directions must be positive".into()));
        }
        if a.orbit.samples < 8 {
            return Err(CliError::Config("analysis.orbit.samples must be at least 8".into()));
        }
        if a.perturb.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CliError::Config("analysis.perturb.epsilons must be finite and nonnegative".into()));
        }
        if let Some(b) = &a.search_box {
            if b.lo.len() != b.hi.len() || b.lo.iter().zip(&b.hi).any(|(l, h)| !(h > l)) || b.per_axis == 0 {
                return Err(CliError::Config("analysis.search_box needs lo < hi per axis and per_axis > 0".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(r#"{"schema": 1, "model": {"name": "goodwin", "params": {"p": 24, "b": 0.8}}}"#)
            .unwrap();
        assert_eq!(c.n_convention, NConvention::default());
        assert_eq!(c.analysis.shoot, ShootSettings::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_thresholds() {
        let bad_key = r#"{"schema": 1, "model": {"name": "goodwin", "params": {"p": 24, "b": 0.8}}, "analysys": {}}"#;
        assert!(matches!(RunConfig::from_json(bad_key), Err(CliError::Config(m)) if m.contains("analysys")));
        let bad_tol = r#"{"schema": 1, "model": {"name": "goodwin", "params": {"p": 24, "b": 0.8}}, "analysis": {"angle_tol": -1}}"#;
        assert!(matches!(RunConfig::from_json(bad_tol), Err(CliError::Config(m)) if m.contains("angle_tol")));
        let bad_schema = r#"{"schema": 2, "model": {"name": "goodwin", "params": {"p": 24, "b": 0.8}}}"#;
        assert!(RunConfig::from_json(bad_schema).is_err());
    }
}
