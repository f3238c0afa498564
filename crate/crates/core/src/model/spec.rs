use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    bidirectional_synthetic, goodwin, linear_cyclic, parse_components, repressilator, Branch, CyclicVectorField,
    DomainBox, FeedbackSignature, JacobianMode, ModelError, SyntheticParams,
};

/// JSON model description: either `{"name": ..., "params": {...}}` or
/// `{"custom": ["expr", ...]}` with optional domain and signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<Vec<String>>,
    /// Per-axis `[lo, hi]`, `null` for an infinite side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[Option<f64>; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<JacobianMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NamedModel {
    LinearCyclic { n: usize, c: f64, a: f64 },
    Goodwin { p: f64, b: f64 },
    Repressilator { alpha: f64, beta: f64, p: f64 },
    Synthetic { n: usize, params: SyntheticParams },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    n: usize,
    c: f64,
    #[serde(default = "minus_one")]
    a: f64,
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoodwinParams {
    p: f64,
    b: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RepParams {
    alpha: f64,
    beta: f64,
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynParams {
    n: usize,
    mu: Vec<f64>,
    sub: Vec<f64>,
    sup: Vec<f64>,
}

fn params<T: serde::de::DeserializeOwned>(name: &str, v: &Option<serde_json::Value>) -> Result<T, ModelError> {
    let v = v.clone().unwrap_or_else(|| serde_json::json!({}));
    serde_json::from_value(v).map_err(|e| ModelError::InvalidParameter(format!("{name} params: {e}")))
}

impl ModelSpec {
    pub fn named(name: &str, params: serde_json::Value) -> Self {
        Self {
            name: Some(name.into()),
            params: Some(params),
            custom: None,
            domain: None,
            delta: None,
            branch: None,
            jacobian: None,
        }
    }

    pub fn resolve(&self) -> Result<NamedModel, ModelError> {
        let name = self.name.as_deref().ok_or_else(|| ModelError::InvalidParameter("model needs a name".into()))?;
        Ok(match name {
            "linear_cyclic" => {
                let p: LinearParams = params(name, &self.params)?;
                NamedModel::LinearCyclic { n: p.n, c: p.c, a: p.a }
            }
            "goodwin" => {
                let p: GoodwinParams = params(name, &self.params)?;
                NamedModel::Goodwin { p: p.p, b: p.b }
            }
            "repressilator" => {
                let p: RepParams = params(name, &self.params)?;
                NamedModel::Repressilator { alpha: p.alpha, beta: p.beta, p: p.p }
            }
            "bidirectional_synthetic" => {
                let p: SynParams = params(name, &self.params)?;
                NamedModel::Synthetic { n: p.n, params: SyntheticParams { mu: p.mu, sub: p.sub, sup: p.sup } }
            }
            other => return Err(ModelError::InvalidParameter(format!("unknown model '{other}'"))),
        })
    }

    pub fn build(&self) -> Result<CyclicVectorField, ModelError> {
        let field = match (&self.name, &self.custom) {
            (Some(_), Some(_)) => {
                return Err(ModelError::InvalidParameter("model has both 'name' and 'custom'".into()));
            }
            (None, None) => return Err(ModelError::InvalidParameter("model needs 'name' or 'custom'".into())),
            (Some(_), None) => {
                if self.domain.is_some() || self.delta.is_some() || self.branch.is_some() {
                    return Err(ModelError::InvalidParameter(
                        "'domain', 'delta' and 'branch' apply to custom models only".into(),
                    ));
                }
                match self.resolve()? {
                    NamedModel::LinearCyclic { n, c, a } => linear_cyclic(n, c, a)?,
                    NamedModel::Goodwin { p, b } => goodwin(p, b)?,
                    NamedModel::Repressilator { alpha, beta, p } => repressilator(alpha, beta, p)?,
                    NamedModel::Synthetic { n, params } => bidirectional_synthetic(n, params)?,
                }
            }
            (None, Some(src)) => self.build_custom(src)?,
        };
        Ok(match self.jacobian {
            Some(mode) => field.with_jacobian_mode(mode),
            None => field,
        })
    }

    fn build_custom(&self, src: &[String]) -> Result<CyclicVectorField, ModelError> {
        let n = src.len();
        let expr = parse_components(src)?;
        let domain = match &self.domain {
            None => DomainBox::whole(n),
            Some(d) => {
                if d.len() != n {
                    return Err(ModelError::DimensionMismatch { expected: n, got: d.len() });
                }
                let lo: Vec<f64> = d.iter().map(|s| s[0].unwrap_or(f64::NEG_INFINITY)).collect();
                let hi: Vec<f64> = d.iter().map(|s| s[1].unwrap_or(f64::INFINITY)).collect();
                if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
                    return Err(ModelError::InvalidParameter("empty domain interval".into()));
                }
                DomainBox { lo, hi }
            }
        };
        let branch = self.branch.unwrap_or(Branch::SubdiagonalStrict);
        let signature = match &self.delta {
            None => FeedbackSignature::normalized(n, branch),
            Some(d) => {
                if d.len() != n {
                    return Err(ModelError::DimensionMismatch { expected: n, got: d.len() });
                }
                FeedbackSignature::new(d.clone(), branch)?
            }
        };
        let desc = serde_json::to_value(self).unwrap_or(serde_json::Value::Null);
        Ok(CyclicVectorField::new("custom", Arc::new(expr), JacobianMode::Analytic, domain, signature)?
            .with_descriptor(desc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_named_and_custom() {
        let spec: ModelSpec = serde_json::from_str(r#"{"name": "goodwin", "params": {"p": 2, "b": 1}}"#).unwrap();
        let f = spec.build().unwrap();
        assert_eq!(f.evaluate(&[1.0, 1.0, 1.0]).unwrap()[0], -0.5);

        let spec: ModelSpec = serde_json::from_str(
            r#"{"custom": ["1/(1+x3^2) - x1", "x1 - x2", "x2 - x3"], "domain": [[0, null], [0, null], [0, null]]}"#,
        )
        .unwrap();
        let g = spec.build().unwrap();
        let (a, b) = (f.jacobian(&[0.4, 0.7, 1.3]).unwrap(), g.jacobian(&[0.4, 0.7, 1.3]).unwrap());
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_specs() {
        let spec: ModelSpec = serde_json::from_str(r#"{"name": "goodwin", "params": {"p": 2}}"#).unwrap();
        assert!(matches!(spec.build(), Err(ModelError::InvalidParameter(_))));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"nme": "goodwin"}"#).is_err());
    }
}
