//! Query document shared by the CLI and the HTTP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diversity::DiversityConfig;
use crate::error::{Error, Result};
use crate::formulation::{Outcome, PiecewiseConfig, PwlStrategy, Relation};
use crate::multiobjective::Degradation;
use crate::scorecard::{DataPoint, RawValue, Scorecard};
use crate::stats::WeightMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Probability,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeDoc {
    #[serde(rename = "type")]
    pub kind: OutcomeKind,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<PwlStrategy>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda4: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardRule {
    Features,
    Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityDoc {
    pub k: usize,
    #[serde(default)]
    pub hard: Vec<HardRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft: Option<SoftDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Weighted,
    Hierarchical,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Method::Weighted),
            "hierarchical" => Ok(Method::Hierarchical),
            _ => Err(Error::Argument(format!(
                "unknown method `{s}` (expected weighted|hierarchical)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyDoc {
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Vec<String>>,
    /// `rel:<x>` or `abs:<x>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<String>,
}

fn default_theta() -> usize {
    1
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0, 0.0, 0.0]
}

fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDoc {
    /// Transform-space values per feature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<BTreeMap<String, f64>>,
    /// Raw values, binned to transform values when `input` is absent and
    /// shown as the current value in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_input: Option<BTreeMap<String, RawValue>>,
    pub outcome: OutcomeDoc,
    #[serde(default = "default_theta")]
    pub theta: usize,
    /// Proximity, closeness and outcome-gap weights; missing entries are 0.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actionable: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piecewise: Option<PiecewiseDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
}

impl QueryDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("query: {e}")))
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Schema(format!("query: {e}")))
    }

    pub fn lambdas3(&self) -> Result<[f64; 3]> {
        if self.lambdas.is_empty() || self.lambdas.len() > 3 {
            return Err(Error::Argument("lambdas takes one to three values".into()));
        }
        let mut l = [0.0; 3];
        l[..self.lambdas.len()].copy_from_slice(&self.lambdas);
        Ok(l)
    }

    pub fn outcome(&self) -> Result<Outcome> {
        let o = &self.outcome;
        match o.kind {
            OutcomeKind::Binary => {
                if o.relation.is_some() {
                    return Err(Error::Argument("binary outcomes take no relation".into()));
                }
                match o.value {
                    1.0 => Ok(Outcome::Binary { target: true }),
                    0.0 => Ok(Outcome::Binary { target: false }),
                    _ => Err(Error::Argument("binary outcome value must be 0 or 1".into())),
                }
            }
            OutcomeKind::Probability => Ok(Outcome::Probability {
                target: o.value,
                relation: o.relation.unwrap_or(Relation::Closest),
            }),
            OutcomeKind::Continuous => Ok(Outcome::Continuous {
                target: o.value,
                relation: o.relation.unwrap_or(Relation::Closest),
            }),
        }
    }

    pub fn piecewise_config(&self) -> Result<PiecewiseConfig> {
        let mut c = PiecewiseConfig::default();
        if let Some(p) = &self.piecewise {
            if let Some(s) = p.strategy {
                c.strategy = s;
            }
            if let Some(r) = p.segments {
                c.max_segments = r;
            }
            if let Some(e) = p.eps {
                if !(e.is_finite() && e > 0.0) {
                    return Err(Error::Argument("piecewise eps must be positive".into()));
                }
                c.eps_approx = e;
            }
        }
        Ok(c)
    }

    pub fn diversity_config(&self) -> Result<Option<DiversityConfig>> {
        let Some(d) = &self.diversity else { return Ok(None) };
        if d.k == 0 {
            return Err(Error::Argument("diversity k must be positive".into()));
        }
        if d.k == 1 {
            return Ok(None);
        }
        let mut c = DiversityConfig::new(d.k);
        c.hard_feature_sets = d.hard.contains(&HardRule::Features);
        c.hard_feature_values = d.hard.contains(&HardRule::Values);
        if let Some(s) = &d.soft {
            c.lambda3 = s.lambda3.unwrap_or(0.0);
            c.lambda4 = s.lambda4.unwrap_or(0.0);
        }
        c.validate()?;
        Ok(Some(c))
    }

    pub fn degradation(&self) -> Result<Degradation> {
        match self.strategy.as_ref().and_then(|s| s.degradation.as_deref()) {
            None => Ok(Degradation::default()),
            Some(s) => s.parse(),
        }
    }

    pub fn method(&self) -> Method {
        self.strategy.as_ref().map(|s| s.method).unwrap_or_default()
    }

    /// The input point, taken from `input` or binned from `raw_input`.
    pub fn data_point(&self, sc: &Scorecard) -> Result<DataPoint> {
        if let Some(input) = &self.input {
            return DataPoint::from_map(sc, input);
        }
        let Some(raw) = &self.raw_input else {
            return Err(Error::Schema("query needs `input` or `raw_input`".into()));
        };
        for k in raw.keys() {
            if sc.feature_index(k).is_none() {
                return Err(Error::validation(k, "unknown feature in raw_input"));
            }
        }
        let values = sc
            .features
            .iter()
            .map(|f| {
                let r = raw.get(&f.name).ok_or_else(|| Error::MissingFeature(f.name.clone()))?;
                let j = f
                    .bin_for_raw(r)
                    .ok_or_else(|| Error::validation(&f.name, format!("raw value {r} falls in no bin")))?;
                Ok(f.bins[j].transform_value)
            })
            .collect::<Result<Vec<_>>>()?;
        DataPoint::new(sc, values)
    }

    /// Raw values in feature order, for display.
    pub fn raw_values(&self, sc: &Scorecard) -> Option<Vec<Option<RawValue>>> {
        self.raw_input
            .as_ref()
            .map(|raw| sc.features.iter().map(|f| raw.get(&f.name).cloned()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_defaults() {
        let q = QueryDoc::from_json(r#"{"input":{"A":0,"B":0},"outcome":{"type":"binary","value":1}}"#).unwrap();
        assert_eq!(q.theta, 1);
        assert_eq!(q.lambdas3().unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(q.outcome().unwrap(), Outcome::Binary { target: true });
        assert_eq!(q.method(), Method::Weighted);
        assert_eq!(q.degradation().unwrap(), Degradation::Relative(0.1));
        assert!(q.diversity_config().unwrap().is_none());
    }

    #[test]
    fn full_document() {
        let q = QueryDoc::from_json(
            r#"{"input":{"A":0,"B":0},"outcome":{"type":"probability","value":0.6,"relation":">="},
                "theta":2,"lambdas":[1,0.5],"piecewise":{"strategy":"uniform","R":8,"eps":0.01},
                "diversity":{"k":3,"hard":["features","values"],"soft":{"lambda3":0.2}},
                "strategy":{"method":"hierarchical","priority":["proximity"],"degradation":"abs:0.5"},
                "weights":"mad","time_limit":5}"#,
        )
        .unwrap();
        assert_eq!(q.lambdas3().unwrap(), [1.0, 0.5, 0.0]);
        assert_eq!(
            q.outcome().unwrap(),
            Outcome::Probability {
                target: 0.6,
                relation: Relation::Ge
            }
        );
        let d = q.diversity_config().unwrap().unwrap();
        assert!(d.hard_feature_sets && d.hard_feature_values);
        assert_eq!((d.lambda3, d.lambda4), (0.2, 0.0));
        assert_eq!(q.piecewise_config().unwrap().max_segments, 8);
        assert_eq!(q.degradation().unwrap(), Degradation::Absolute(0.5));
        let back: QueryDoc = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(QueryDoc::from_json("{"), Err(Error::Schema(_))));
        assert!(QueryDoc::from_json(r#"{"outcome":{"type":"binary","value":1},"bogus":1}"#).is_err());
        let q = QueryDoc::from_json(r#"{"input":{},"outcome":{"type":"binary","value":0.5}}"#).unwrap();
        assert!(q.outcome().is_err());
        let q =
            QueryDoc::from_json(r#"{"input":{},"outcome":{"type":"binary","value":1},"lambdas":[1,2,3,4]}"#).unwrap();
        assert!(q.lambdas3().is_err());
    }
}
