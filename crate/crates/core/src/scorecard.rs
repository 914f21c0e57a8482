//! Scorecard models: binned features with transform values (WoE or bin mean),
//! a linear decision function over the transformed values, and the canonical
//! JSON document format.
//!
//! All optimization happens in transform space. A [`DataPoint`] holds, for
//! every feature, the transform value of the bin the applicant falls in.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used to decide that a bin's transform value equals the
/// applicant's current value.
pub const EXCLUSION_TOL: f64 = 1e-12;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetType {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BinSpec {
    /// Half-open numeric interval `[lower, upper)`; infinite ends are allowed.
    Interval {
        lower: f64,
        upper: f64,
    },
    Categories(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub label: String,
    pub spec: BinSpec,
    pub transform_value: f64,
    /// Externally supplied (possibly scaled) points, kept for display only.
    pub points: Option<f64>,
}

impl Bin {
    /// Human readable form of the bin: `[97.50, ∞)` for intervals, the
    /// category itself for singleton categorical bins, `[a, b]` otherwise.
    pub fn display(&self) -> String {
        match &self.spec {
            BinSpec::Interval { lower, upper } => format_interval(*lower, *upper),
            BinSpec::Categories(cats) if cats.len() == 1 => cats[0].clone(),
            BinSpec::Categories(cats) => format!("[{}]", cats.join(", ")),
        }
    }

    pub fn contains(&self, raw: &RawValue) -> bool {
        match (&self.spec, raw) {
            (BinSpec::Interval { lower, upper }, RawValue::Number(v)) => *v >= *lower && *v < *upper,
            (BinSpec::Categories(cats), RawValue::Category(c)) => cats.iter().any(|x| x == c),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub coefficient: f64,
    pub actionable: bool,
    pub bins: Vec<Bin>,
}

impl Feature {
    /// Score points of bin `j`: the supplied value if present, otherwise
    /// `coefficient * transform_value`.
    pub fn points(&self, j: usize) -> f64 {
        let bin = &self.bins[j];
        bin.points.unwrap_or(self.coefficient * bin.transform_value)
    }

    /// Index of the bin containing a raw (untransformed) value.
    pub fn bin_for_raw(&self, raw: &RawValue) -> Option<usize> {
        self.bins.iter().position(|b| b.contains(raw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scorecard {
    pub features: Vec<Feature>,
    pub intercept: f64,
    pub target_type: TargetType,
}

/// An applicant's feature vector in transform space, ordered like the
/// scorecard's features.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    values: Vec<f64>,
}

/// An untransformed input value, used for bin lookup and display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Category(String),
}

impl fmt::Display for RawValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawValue::Number(v) => f.write_str(&format_number(*v)),
            RawValue::Category(c) => f.write_str(c),
        }
    }
}

/// A bin whose transform value differs from the applicant's current value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub bin: usize,
    pub value: f64,
}

/// Minimum and maximum achievable decision-function values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub min: f64,
    pub max: f64,
}

impl DataPoint {
    pub fn new(sc: &Scorecard, values: Vec<f64>) -> Result<Self> {
        if values.len() != sc.features.len() {
            return Err(Error::Argument(format!(
                "data point has {} values, scorecard has {} features",
                values.len(),
                sc.features.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(&sc.features[i].name, "input value is not finite"));
        }
        Ok(Self { values })
    }

    /// Builds a point from a name → value map; every scorecard feature must be
    /// present and no unknown names are accepted.
    pub fn from_map(sc: &Scorecard, map: &BTreeMap<String, f64>) -> Result<Self> {
        for name in map.keys() {
            if sc.feature_index(name).is_none() {
                return Err(Error::validation(name, "unknown feature in input"));
            }
        }
        let values = sc
            .features
            .iter()
            .map(|f| {
                map.get(&f.name)
                    .copied()
                    .ok_or_else(|| Error::MissingFeature(f.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sc, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn to_map(&self, sc: &Scorecard) -> BTreeMap<String, f64> {
        sc.features
            .iter()
            .zip(&self.values)
            .map(|(f, v)| (f.name.clone(), *v))
            .collect()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Scorecard {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScorecardDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::try_from(doc)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let doc: ScorecardDoc = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        Self::try_from(doc)
    }

    pub fn to_document(&self) -> ScorecardDoc {
        ScorecardDoc::from(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("scorecard serializes")
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// `c_0 + Σ c_i x_i`.
    pub fn decision_function(&self, x: &DataPoint) -> f64 {
        self.score_values(x.values())
    }

    pub(crate) fn score_values(&self, values: &[f64]) -> f64 {
        self.intercept
            + self
                .features
                .iter()
                .zip(values)
                .map(|(f, v)| f.coefficient * v)
                .sum::<f64>()
    }

    pub fn predict_probability(&self, x: &DataPoint) -> Result<f64> {
        if self.target_type != TargetType::Binary {
            return Err(Error::TargetType(
                "probabilities are only defined for binary-target scorecards".into(),
            ));
        }
        Ok(logistic(self.decision_function(x)))
    }

    /// For every feature, the bins whose transform value differs from the
    /// current value. A feature whose only bin matches `x` gets an empty list.
    pub fn candidate_values(&self, x: &DataPoint) -> Vec<Vec<Candidate>> {
        self.features
            .iter()
            .zip(x.values())
            .map(|(f, &xi)| {
                f.bins
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| (b.transform_value - xi).abs() > EXCLUSION_TOL)
                    .map(|(bin, b)| Candidate {
                        bin,
                        value: b.transform_value,
                    })
                    .collect()
            })
            .collect()
    }

    /// Tightest box on the decision function over all assignments of each
    /// feature to one of its candidates or its current value. Valid for any
    /// coefficient sign.
    pub fn score_bounds(&self, x: &DataPoint, candidates: &[Vec<Candidate>]) -> ScoreBounds {
        let mut lo = self.intercept;
        let mut hi = self.intercept;
        for ((f, &xi), cands) in self.features.iter().zip(x.values()).zip(candidates) {
            let contributions = cands
                .iter()
                .map(|c| f.coefficient * c.value)
                .chain(std::iter::once(f.coefficient * xi));
            let (min, max) = contributions.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            lo += min;
            hi += max;
        }
        ScoreBounds { min: lo, max: hi }
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::validation("scorecard", "at least one feature is required"));
        }
        if !self.intercept.is_finite() {
            return Err(Error::validation("scorecard", "intercept is not finite"));
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::validation(&f.name, "duplicate feature name"));
            }
            validate_feature(f)?;
        }
        Ok(())
    }
}

fn validate_feature(f: &Feature) -> Result<()> {
    if f.name.is_empty() {
        return Err(Error::validation("scorecard", "feature with empty name"));
    }
    if !f.coefficient.is_finite() {
        return Err(Error::validation(&f.name, "coefficient is not finite"));
    }
    if f.bins.is_empty() {
        return Err(Error::validation(&f.name, "feature has no bins"));
    }
    let mut labels = HashSet::new();
    for b in &f.bins {
        if !labels.insert(b.label.as_str()) {
            return Err(Error::validation(&f.name, format!("duplicate bin label `{}`", b.label)));
        }
        if !b.transform_value.is_finite() {
            return Err(Error::validation(
                &f.name,
                format!("bin `{}` has a non-finite transform value", b.label),
            ));
        }
        if b.points.is_some_and(|p| !p.is_finite()) {
            return Err(Error::validation(
                &f.name,
                format!("bin `{}` has non-finite points", b.label),
            ));
        }
    }
    let numeric = matches!(f.bins[0].spec, BinSpec::Interval { .. });
    if f.bins
        .iter()
        .any(|b| matches!(b.spec, BinSpec::Interval { .. }) != numeric)
    {
        return Err(Error::validation(&f.name, "feature mixes numeric and categorical bins"));
    }
    if numeric {
        let mut prev: Option<(&Bin, f64, f64)> = None;
        for b in &f.bins {
            let BinSpec::Interval { lower, upper } = b.spec else {
                unreachable!()
            };
            if lower.is_nan() || upper.is_nan() || lower >= upper {
                return Err(Error::validation(
                    &f.name,
                    format!("bin `{}` requires lower < upper", b.label),
                ));
            }
            if let Some((pb, pl, pu)) = prev {
                if lower < pl {
                    return Err(Error::validation(
                        &f.name,
                        format!("bins `{}` and `{}` are not ordered by lower bound", pb.label, b.label),
                    ));
                }
                if lower < pu {
                    return Err(Error::validation(
                        &f.name,
                        format!("bins `{}` and `{}` overlap", pb.label, b.label),
                    ));
                }
            }
            prev = Some((b, lower, upper));
        }
    } else {
        let mut seen = HashSet::new();
        for b in &f.bins {
            let BinSpec::Categories(cats) = &b.spec else {
                unreachable!()
            };
            if cats.is_empty() {
                return Err(Error::validation(
                    &f.name,
                    format!("bin `{}` has no categories", b.label),
                ));
            }
            for c in cats {
                if !seen.insert(c.as_str()) {
                    return Err(Error::validation(
                        &f.name,
                        format!("category `{c}` appears in more than one bin"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// `[97.50, ∞)` style rendering with two decimals.
pub fn format_interval(lower: f64, upper: f64) -> String {
    let lo = if lower == f64::NEG_INFINITY {
        "(-∞".to_string()
    } else {
        format!("[{lower:.2}")
    };
    let hi = if upper == f64::INFINITY {
        "∞)".to_string()
    } else {
        format!("{upper:.2})")
    };
    format!("{lo}, {hi}")
}

/// Integers print without decimals; everything else uses the shortest
/// round-trip representation.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

// Document format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorecardDoc {
    pub version: String,
    pub target_type: TargetType,
    #[serde(default)]
    pub intercept: f64,
    pub features: Vec<FeatureDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDoc {
    pub name: String,
    pub coefficient: f64,
    #[serde(default = "default_true")]
    pub actionable: bool,
    pub bins: Vec<BinDoc>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinDoc {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    pub transform_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<f64>,
}

impl TryFrom<ScorecardDoc> for Scorecard {
    type Error = Error;

    fn try_from(doc: ScorecardDoc) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported scorecard version `{}`",
                doc.version
            )));
        }
        let features = doc
            .features
            .into_iter()
            .map(|f| {
                let bins = f
                    .bins
                    .into_iter()
                    .map(|b| {
                        let spec = match b.categories {
                            Some(_) if b.lower.is_some() || b.upper.is_some() => {
                                return Err(Error::Schema(format!(
                                    "feature `{}`, bin `{}`: categories cannot be combined with lower/upper",
                                    f.name, b.label
                                )))
                            }
                            Some(cats) => BinSpec::Categories(cats),
                            None => BinSpec::Interval {
                                lower: b.lower.unwrap_or(f64::NEG_INFINITY),
                                upper: b.upper.unwrap_or(f64::INFINITY),
                            },
                        };
                        Ok(Bin {
                            label: b.label,
                            spec,
                            transform_value: b.transform_value,
                            points: b.points,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Feature {
                    name: f.name,
                    coefficient: f.coefficient,
                    actionable: f.actionable,
                    bins,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sc = Scorecard {
            features,
            intercept: doc.intercept,
            target_type: doc.target_type,
        };
        sc.validate()?;
        Ok(sc)
    }
}

impl From<&Scorecard> for ScorecardDoc {
    fn from(sc: &Scorecard) -> Self {
        let features = sc
            .features
            .iter()
            .map(|f| FeatureDoc {
                name: f.name.clone(),
                coefficient: f.coefficient,
                actionable: f.actionable,
                bins: f
                    .bins
                    .iter()
                    .map(|b| {
                        let (lower, upper, categories) = match &b.spec {
                            BinSpec::Interval { lower, upper } => (
                                lower.is_finite().then_some(*lower),
                                upper.is_finite().then_some(*upper),
                                None,
                            ),
                            BinSpec::Categories(c) => (None, None, Some(c.clone())),
                        };
                        BinDoc {
                            label: b.label.clone(),
                            lower,
                            upper,
                            categories,
                            transform_value: b.transform_value,
                            points: b.points,
                        }
                    })
                    .collect(),
            })
            .collect();
        ScorecardDoc {
            version: FORMAT_VERSION.to_string(),
            target_type: sc.target_type,
            intercept: sc.intercept,
            features,
        }
    }
}
