//! Weighted and hierarchical (lexicographic with bounded degradation)
//! optimization over the named objective terms of a model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{solve_milp_from, ConstraintSense, MilpModel, MilpResult, MilpStatus, SolverLimits};

/// Allowed deterioration of an earlier stage's optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Degradation {
    Relative(f64),
    Absolute(f64),
}

impl Default for Degradation {
    fn default() -> Self {
        Degradation::Relative(0.1)
    }
}

impl Degradation {
    /// Slack added to an optimum `f`; relative slack switches to absolute
    /// for optima within 1e-9 of zero.
    pub fn slack(self, f: f64) -> f64 {
        match self {
            Degradation::Relative(d) if f.abs() > 1e-9 => d * f.abs(),
            Degradation::Relative(d) | Degradation::Absolute(d) => d,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Degradation::Relative(d) | Degradation::Absolute(d) => d,
        }
    }
}

impl std::str::FromStr for Degradation {
    type Err = Error;

    /// `rel:0.1`, `abs:0.5`, or a bare number (relative).
    fn from_str(s: &str) -> Result<Self> {
        let (kind, v) = s.split_once(':').unwrap_or(("rel", s));
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad degradation value `{s}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Argument("degradation must be finite and nonnegative".into()));
        }
        match kind.trim() {
            "rel" | "relative" => Ok(Degradation::Relative(v)),
            "abs" | "absolute" => Ok(Degradation::Absolute(v)),
            _ => Err(Error::Argument(format!("unknown degradation kind `{kind}`"))),
        }
    }
}

impl std::fmt::Display for Degradation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degradation::Relative(v) => write!(f, "rel:{v}"),
            Degradation::Absolute(v) => write!(f, "abs:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub term: String,
    pub status: MilpStatus,
    pub optimum: f64,
    /// Right-hand side imposed on this term in later stages.
    pub bound: f64,
    pub nodes: usize,
    pub time: f64,
}

/// Solves with the given term weights (unlisted terms get zero weight).
pub fn solve_weighted(model: &MilpModel, weights: &[(&str, f64)], limits: &SolverLimits) -> Result<MilpResult> {
    let mut m = model.clone();
    m.set_weights(weights)?;
    solve_milp_from(&m, limits, None)
}

/// Optimizes the terms one at a time in priority order. After each stage
/// the term is constrained to stay within its optimum plus the slack, and
/// the stage solution warm-starts the next stage.
pub fn solve_hierarchical(
    model: &MilpModel,
    priority: &[String],
    degradation: Degradation,
    limits: &SolverLimits,
) -> Result<(MilpResult, Vec<StageReport>)> {
    if priority.is_empty() {
        return Err(Error::Argument("hierarchical mode needs at least one term".into()));
    }
    for (i, t) in priority.iter().enumerate() {
        if model.term(t).is_none() {
            return Err(Error::Argument(format!("model has no objective term `{t}`")));
        }
        if priority[..i].contains(t) {
            return Err(Error::Argument(format!("term `{t}` is listed twice")));
        }
    }
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs_f64(limits.time_limit.clamp(0.0, 1e9));
    let mut m = model.clone();
    let mut stages: Vec<StageReport> = Vec::new();
    let mut start: Option<Vec<f64>> = None;
    let mut last: Option<MilpResult> = None;
    let mut limited = false;

    for (s, term) in priority.iter().enumerate() {
        m.set_weights(&[(term.as_str(), 1.0)])?;
        let remaining = deadline
            .saturating_duration_since(std::time::Instant::now())
            .as_secs_f64();
        let stage_limits = limits.with_time_limit(remaining);
        let r = solve_milp_from(&m, &stage_limits, start.as_deref())?;
        if !r.status.has_solution() {
            if s > 0 && r.status == MilpStatus::Infeasible {
                return Err(Error::Internal(format!("stage {} (`{term}`) became infeasible", s + 1)));
            }
            stages.push(StageReport {
                term: term.clone(),
                status: r.status,
                optimum: f64::NAN,
                bound: f64::NAN,
                nodes: r.nodes_explored,
                time: r.wall_time,
            });
            // An earlier stage's incumbent is still a valid answer.
            return Ok(match last {
                Some(mut prev) if r.status == MilpStatus::TimeLimit => {
                    prev.status = MilpStatus::Feasible;
                    (prev, stages)
                }
                _ => (r, stages),
            });
        }
        limited |= r.status == MilpStatus::Feasible;
        let f = m.term(term).expect("checked").expr.eval(&r.values);
        let bound = f + degradation.slack(f);
        stages.push(StageReport {
            term: term.clone(),
            status: r.status,
            optimum: f,
            bound,
            nodes: r.nodes_explored,
            time: r.wall_time,
        });
        if s + 1 < priority.len() {
            let expr = m.term(term).expect("checked").expr.clone();
            m.add_constraint(format!("stage[{term}]"), expr, ConstraintSense::Le, bound);
        }
        start = Some(r.values.clone());
        last = Some(r);
    }

    let mut r = last.expect("at least one stage");
    if limited {
        r.status = MilpStatus::Feasible;
    }
    // Report every term under the original weights of the model.
    r.objective_terms = model.term_values(&r.values);
    r.objective_total = model.objective_value(&r.values);
    r.nodes_explored = stages.iter().map(|s| s.nodes).sum();
    r.wall_time = stages.iter().map(|s| s.time).sum();
    Ok((r, stages))
}
