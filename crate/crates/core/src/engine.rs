//! End-to-end run: query document in, report out. Used by both the CLI
//! and the HTTP service so the two produce identical reports.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::Instant;

use serde::Serialize;

use crate::diversity::{extend_multi, measure_diversity};
use crate::error::{Error, Result};
use crate::formulation::{
    build, decode_all, piecewise_for, CfModel, CfQuery, Counterfactual, Outcome, TERM_CLOSENESS, TERM_DIVERSITY_F,
    TERM_DIVERSITY_FV, TERM_OUTCOME, TERM_PROXIMITY,
};
use crate::milp::{solve_milp, MilpResult, MilpStatus, SolverLimits};
use crate::multiobjective::{solve_hierarchical, StageReport};
use crate::oracle::{oracle_multi, oracle_single, OracleResult, OracleStatus};
use crate::query::{Method, QueryDoc};
use crate::scorecard::{Scorecard, TargetType};
use crate::stats::{compute_gaussian_stats, compute_weights, Dataset, WeightMethod};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub proximity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closeness: Option<f64>,
    /// Mean predicted probability (binary target) or score (continuous).
    pub outcome: f64,
    pub d_f: usize,
    pub d_fv: usize,
    pub pd_min: f64,
    pub pd_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub variables: usize,
    pub constraints: usize,
    pub binaries: usize,
    pub nodes: usize,
    pub simplex_iterations: usize,
    pub best_bound: f64,
    pub objective: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub build: f64,
    pub solve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseSummary {
    pub segments: usize,
    pub eps_approx: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub query: QueryDoc,
    pub status: MilpStatus,
    pub counterfactuals: Vec<Counterfactual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub piecewise: Option<PiecewiseSummary>,
    pub solver: SolverStats,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report as a JSON value with every timing field removed.
    pub fn without_timings(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        strip_timings(&mut v);
        v
    }
}

/// Removes `timing` objects and `time` fields, recursively.
pub fn strip_timings(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("timing");
            map.remove("time");
            map.values_mut().for_each(strip_timings);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

/// Everything needed to build the model, resolved from the documents.
pub struct Prepared {
    pub query: CfQuery,
    pub diversity: Option<crate::diversity::DiversityConfig>,
    pub priority: Option<Vec<String>>,
}

/// Resolves a query document against a scorecard and optional sample data.
pub fn prepare(sc: &Scorecard, data: Option<&Dataset>, doc: &QueryDoc) -> Result<Prepared> {
    let x = doc.data_point(sc)?;
    let outcome = doc.outcome()?;
    let mut lambdas = doc.lambdas3()?;
    let diversity = doc.diversity_config()?;
    let method = doc.method();

    let priority = match method {
        Method::Weighted => None,
        Method::Hierarchical => {
            let given = doc.strategy.as_ref().and_then(|s| s.priority.clone());
            let list = match given {
                Some(p) => p,
                None => {
                    let mut p = Vec::new();
                    for (name, w) in [
                        (TERM_PROXIMITY, lambdas[0]),
                        (TERM_CLOSENESS, lambdas[1]),
                        (TERM_OUTCOME, lambdas[2]),
                    ] {
                        if w > 0.0 && (name != TERM_OUTCOME || outcome.has_gap_term()) {
                            p.push(name.to_string());
                        }
                    }
                    if let Some(d) = &diversity {
                        if d.lambda3 > 0.0 {
                            p.push(TERM_DIVERSITY_F.to_string());
                        }
                        if d.lambda4 > 0.0 {
                            p.push(TERM_DIVERSITY_FV.to_string());
                        }
                    }
                    p
                }
            };
            if list.is_empty() {
                return Err(Error::Argument("hierarchical mode needs a priority list".into()));
            }
            // Terms in the priority list are built with unit weight.
            lambdas = [0.0; 3];
            for (i, name) in [TERM_PROXIMITY, TERM_CLOSENESS, TERM_OUTCOME].iter().enumerate() {
                if list.iter().any(|t| t == name) {
                    lambdas[i] = 1.0;
                }
            }
            if lambdas.iter().all(|l| *l == 0.0) {
                lambdas[0] = 1.0;
            }
            Some(list)
        }
    };

    let aligned = data.map(|d| d.aligned(sc)).transpose()?;
    let method_w = doc.weights.unwrap_or(WeightMethod::InverseRange);
    let weights = compute_weights(sc, &x, aligned.as_ref(), method_w)?;
    let stats = if lambdas[1] > 0.0 {
        let d = aligned
            .as_ref()
            .ok_or_else(|| Error::Build("the closeness term needs sample data".into()))?;
        Some(compute_gaussian_stats(d, doc.ridge)?)
    } else {
        None
    };

    let mut query = CfQuery::new(x, outcome, weights);
    query.theta = doc.theta;
    query.actionable_override = doc.actionable.clone();
    query.lambdas = lambdas;
    query.epsilon = doc.epsilon;
    query.stats = stats;
    query.piecewise = doc.piecewise_config()?;
    Ok(Prepared {
        query,
        diversity,
        priority,
    })
}

pub fn build_model(sc: &Scorecard, prepared: &Prepared) -> Result<CfModel> {
    match &prepared.diversity {
        Some(cfg) => extend_multi(sc, &prepared.query, cfg),
        None => build(sc, &prepared.query, 1, None),
    }
}

/// Runs a query document. `default_time_limit` applies when the document
/// does not set one; `max_time_limit` caps it.
pub fn run(
    sc: &Scorecard,
    data: Option<&Dataset>,
    doc: &QueryDoc,
    default_time_limit: f64,
    max_time_limit: f64,
) -> Result<RunReport> {
    let started = Instant::now();
    let prepared = prepare(sc, data, doc)?;
    let cf = build_model(sc, &prepared)?;
    let mut warnings = Vec::new();
    if let Some(cfg) = &prepared.diversity {
        let cands = cf.candidates.iter().map(Vec::len).sum();
        warnings.extend(cfg.warnings(sc.num_features(), cands));
    }
    if let Some(p) = &cf.pwl {
        if p.max_error > p.eps_approx {
            warnings.push(format!(
                "piecewise approximation error {:.2e} is above the target {:.2e} with {} segments",
                p.max_error,
                p.eps_approx,
                p.segments()
            ));
        }
    }
    let built = started.elapsed().as_secs_f64();

    let time_limit = doc.time_limit.unwrap_or(default_time_limit);
    if !(time_limit.is_finite() && time_limit > 0.0) {
        return Err(Error::Argument("time_limit must be positive".into()));
    }
    let limits = SolverLimits::default().with_time_limit(time_limit.min(max_time_limit));
    let solve_start = Instant::now();
    let (result, stages) = match &prepared.priority {
        None => (solve_milp(&cf.model, &limits)?, Vec::new()),
        Some(p) => solve_hierarchical(&cf.model, p, doc.degradation()?, &limits)?,
    };
    let solved = solve_start.elapsed().as_secs_f64();

    let raw = doc.raw_values(sc);
    let counterfactuals = if result.status.has_solution() {
        decode_all(sc, &prepared.query, &cf, &result, raw.as_deref())?
    } else {
        Vec::new()
    };
    let metrics = metrics(sc, &counterfactuals);
    Ok(RunReport {
        query: doc.clone(),
        status: result.status,
        counterfactuals,
        metrics,
        stages,
        piecewise: cf.pwl.as_ref().map(|p| PiecewiseSummary {
            segments: p.segments(),
            eps_approx: p.eps_approx,
            max_error: p.max_error,
        }),
        solver: solver_stats(&cf, &result),
        timing: Timing {
            build: built,
            solve: solved,
            total: started.elapsed().as_secs_f64(),
        },
        warnings,
    })
}

/// Enumerates the same query exhaustively. Only weighted objectives are
/// supported.
pub fn run_oracle(sc: &Scorecard, data: Option<&Dataset>, doc: &QueryDoc) -> Result<OracleResult> {
    let prepared = prepare(sc, data, doc)?;
    if prepared.priority.is_some() {
        return Err(Error::Argument("the oracle evaluates weighted objectives only".into()));
    }
    let q = &prepared.query;
    let pwl = match q.outcome {
        Outcome::Probability { .. } => {
            let candidates = sc.candidate_values(&q.x);
            Some(piecewise_for(sc.score_bounds(&q.x, &candidates), &q.piecewise)?)
        }
        _ => None,
    };
    match &prepared.diversity {
        Some(cfg) => oracle_multi(sc, q, pwl.as_ref(), cfg),
        None => oracle_single(sc, q, pwl.as_ref()),
    }
}

/// Oracle result with each optimal tuple spelled out as bin labels.
pub fn render_oracle(sc: &Scorecard, r: &OracleResult) -> String {
    let mut out = String::new();
    let status = match r.status {
        OracleStatus::Optimal => "optimal",
        OracleStatus::Infeasible => "infeasible",
    };
    let _ = writeln!(out, "status: {status}  ({} enumerated)", r.enumerated);
    if r.status == OracleStatus::Infeasible {
        return out;
    }
    let _ = writeln!(
        out,
        "objective {:.9}  ({} optimal)",
        r.best_objective,
        r.best_assignments.len()
    );
    for (t, tuple) in r.best_assignments.iter().enumerate() {
        let cells: Vec<String> = tuple
            .iter()
            .map(|a| {
                let changes: Vec<String> = a
                    .iter()
                    .enumerate()
                    .filter_map(|(i, b)| {
                        b.map(|j| format!("{} -> {}", sc.features[i].name, sc.features[i].bins[j].label))
                    })
                    .collect();
                if changes.is_empty() {
                    "(no changes)".to_string()
                } else {
                    changes.join(", ")
                }
            })
            .collect();
        let _ = writeln!(out, "  {}: {}", t + 1, cells.join(" | "));
    }
    out
}

fn solver_stats(cf: &CfModel, r: &MilpResult) -> SolverStats {
    SolverStats {
        variables: cf.model.variables.len(),
        constraints: cf.model.constraints.len(),
        binaries: cf.model.num_binaries(),
        nodes: r.nodes_explored,
        simplex_iterations: r.simplex_iterations,
        best_bound: r.best_bound,
        objective: r.objective_total,
        terms: r.objective_terms.clone(),
    }
}

/// Report metrics recomputed from the decoded counterfactuals.
pub fn metrics(sc: &Scorecard, cfs: &[Counterfactual]) -> Option<Metrics> {
    if cfs.is_empty() {
        return None;
    }
    let n = cfs.len() as f64;
    let pd: Vec<f64> = cfs
        .iter()
        .map(|c| match sc.target_type {
            TargetType::Binary => c.probability.unwrap_or(f64::NAN),
            TargetType::Continuous => c.score,
        })
        .collect();
    let closeness = cfs
        .iter()
        .map(|c| c.closeness)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    let div = measure_diversity(cfs, sc);
    Some(Metrics {
        proximity: cfs.iter().map(|c| c.proximity).sum::<f64>() / n,
        closeness,
        outcome: pd.iter().sum::<f64>() / n,
        d_f: div.d_f,
        d_fv: div.d_fv,
        pd_min: pd.iter().cloned().fold(f64::INFINITY, f64::min),
        pd_max: pd.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Human-readable rendering with one "Feature / Current value / Required
/// value" table per counterfactual.
pub fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "status: {}  (solve {:.3} s, {} nodes)",
        report.status, report.timing.solve, report.solver.nodes
    );
    if report.counterfactuals.is_empty() && report.status == MilpStatus::Infeasible {
        let _ = writeln!(out, "no counterfactual satisfies the constraints");
    }
    for (k, c) in report.counterfactuals.iter().enumerate() {
        let _ = write!(out, "\ncounterfactual {}  score {:.4}", k + 1, c.score);
        if let Some(p) = c.probability {
            let _ = write!(out, "  probability {p:.4}");
        }
        let _ = write!(out, "  proximity {:.4}", c.proximity);
        if let Some(cl) = c.closeness {
            let _ = write!(out, "  closeness {cl:.4}");
        }
        out.push('\n');
        let rows: Vec<[&str; 3]> = c
            .changes
            .iter()
            .map(|ch| [ch.feature.as_str(), ch.current.as_str(), ch.required.as_str()])
            .collect();
        let header = ["Feature", "Current value", "Required value"];
        let mut width = header.map(|h| h.chars().count());
        for r in &rows {
            for i in 0..3 {
                width[i] = width[i].max(r[i].chars().count());
            }
        }
        let line = |cells: [&str; 3]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(width)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("  {}\n", padded.join(" | ").trim_end())
        };
        out.push_str(&line(header));
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "  {}", rule.join("-+-"));
        if rows.is_empty() {
            out.push_str("  (no changes)\n");
        }
        for r in rows {
            out.push_str(&line(r));
        }
    }
    if let Some(m) = &report.metrics {
        let _ = write!(out, "\nproximity {:.4}", m.proximity);
        if let Some(c) = m.closeness {
            let _ = write!(out, "  closeness {c:.4}");
        }
        let _ = writeln!(
            out,
            "  outcome {:.4}  PD [{:.4}, {:.4}]  D_F {}  D_FV {}",
            m.outcome, m.pd_min, m.pd_max, m.d_f, m.d_fv
        );
    }
    for s in &report.stages {
        let _ = writeln!(
            out,
            "stage {}: {} = {:.6} (bound {:.6})",
            s.term, s.status, s.optimum, s.bound
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
