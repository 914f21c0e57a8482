use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::milp::MilpResult;
use crate::scorecard::{format_number, logistic, RawValue, Scorecard, TargetType};

use super::{CfModel, CfQuery, Outcome, Relation, TERM_CLOSENESS, TERM_OUTCOME, TERM_PROXIMITY};

/// One row of the "Feature / Current value / Required value" table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Change {
    pub feature: String,
    pub current: String,
    pub required: String,
    pub required_bin: String,
    pub current_value: f64,
    pub new_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterfactual {
    pub changes: Vec<Change>,
    /// Chosen bin per feature; `None` keeps the current value.
    pub assignment: Vec<Option<usize>>,
    /// Counterfactual point in transform space.
    pub values: Vec<f64>,
    /// Decision function recomputed from `values`.
    pub score: f64,
    /// Exact logistic of `score` (binary-target scorecards).
    pub probability: Option<f64>,
    pub proximity: f64,
    pub closeness: Option<f64>,
    /// `|f̃(score) − y′|` or `|score − y′|` for gap-type outcomes.
    pub outcome_gap: Option<f64>,
    /// Decision function evaluated on the solver's `x′` variables.
    pub model_score: f64,
    /// The solver's piecewise probability `f`.
    pub model_probability: Option<f64>,
    /// Unweighted objective terms read from the solver's split variables.
    pub model_terms: BTreeMap<String, f64>,
}

fn current_display(sc: &Scorecard, i: usize, x: f64, raw: Option<&RawValue>) -> String {
    if let Some(r) = raw {
        return r.to_string();
    }
    let f = &sc.features[i];
    match f.bins.iter().find(|b| (b.transform_value - x).abs() <= 1e-12) {
        Some(b) => b.display(),
        None => format_number(x),
    }
}

/// Decodes counterfactual copy `k` of a solved model.
pub fn decode_solution(
    sc: &Scorecard,
    q: &CfQuery,
    cf: &CfModel,
    result: &MilpResult,
    k: usize,
    raw: Option<&[Option<RawValue>]>,
) -> Result<Counterfactual> {
    if !result.status.has_solution() {
        return Err(Error::Decode(format!(
            "no solution to decode (status {})",
            result.status
        )));
    }
    let b = &cf.blocks[k];
    let x = q.x.values();
    let mut assignment = Vec::with_capacity(x.len());
    let mut values = x.to_vec();
    let mut changes = Vec::new();
    for (i, f) in sc.features.iter().enumerate() {
        let on: Vec<usize> = b.z[i]
            .iter()
            .enumerate()
            .filter(|(_, &z)| result.value(z) > 0.5)
            .map(|(j, _)| j)
            .collect();
        let a = result.value(b.a[i]).round();
        if on.len() > 1 || a != on.len() as f64 {
            return Err(Error::Decode(format!(
                "inconsistent change indicators for feature `{}`",
                f.name
            )));
        }
        match on.first() {
            None => assignment.push(None),
            Some(&j) => {
                if !cf.actionable[i] {
                    return Err(Error::Decode(format!(
                        "non-actionable feature `{}` was changed",
                        f.name
                    )));
                }
                let c = cf.candidates[i][j];
                let bin = &f.bins[c.bin];
                values[i] = c.value;
                assignment.push(Some(c.bin));
                changes.push(Change {
                    feature: f.name.clone(),
                    current: current_display(sc, i, x[i], raw.and_then(|r| r[i].as_ref())),
                    required: bin.display(),
                    required_bin: bin.label.clone(),
                    current_value: x[i],
                    new_value: c.value,
                });
            }
        }
    }

    let score = sc.score_values(&values);
    let probability = (sc.target_type == TargetType::Binary).then(|| logistic(score));
    let proximity = x
        .iter()
        .zip(&values)
        .zip(&q.weights.w)
        .map(|((a, b), w)| w * (a - b).abs())
        .sum();
    let closeness = match (&q.stats, q.lambdas[1] > 0.0) {
        (Some(st), true) => Some(st.l1_closeness(&values)),
        _ => None,
    };
    let outcome_gap = match q.outcome {
        Outcome::Continuous {
            target,
            relation: Relation::Closest,
        } => Some((score - target).abs()),
        Outcome::Probability {
            target,
            relation: Relation::Closest,
        } => cf.pwl.as_ref().map(|p| (p.eval(score) - target).abs()),
        _ => None,
    };

    let solver_x: Vec<f64> = b.x_prime.iter().map(|&v| result.value(v)).collect();
    let mut model_terms = BTreeMap::new();
    let t: f64 = (0..x.len())
        .map(|i| q.weights.w[i] * (result.value(b.t_plus[i]) + result.value(b.t_minus[i])))
        .sum();
    model_terms.insert(TERM_PROXIMITY.to_string(), t);
    if !b.m_plus.is_empty() {
        let m: f64 = b
            .m_plus
            .iter()
            .zip(&b.m_minus)
            .map(|(&p, &n)| result.value(p) + result.value(n))
            .sum();
        model_terms.insert(TERM_CLOSENESS.to_string(), m);
    }
    if let Some((qp, qm)) = b.q {
        model_terms.insert(TERM_OUTCOME.to_string(), result.value(qp) + result.value(qm));
    }

    Ok(Counterfactual {
        changes,
        assignment,
        values,
        score,
        probability,
        proximity,
        closeness,
        outcome_gap,
        model_score: sc.score_values(&solver_x),
        model_probability: b.f.map(|f| result.value(f)),
        model_terms,
    })
}

/// Decodes every copy, ordered by proximity plus closeness (stable).
pub fn decode_all(
    sc: &Scorecard,
    q: &CfQuery,
    cf: &CfModel,
    result: &MilpResult,
    raw: Option<&[Option<RawValue>]>,
) -> Result<Vec<Counterfactual>> {
    let mut out = (0..cf.blocks.len())
        .map(|k| decode_solution(sc, q, cf, result, k, raw))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        (a.proximity + a.closeness.unwrap_or(0.0)).total_cmp(&(b.proximity + b.closeness.unwrap_or(0.0)))
    });
    Ok(out)
}
