//! Grid benchmark over K, Θ and the multi-objective method on the seeded
//! synthetic credit instance.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::engine::run;
use crate::error::Result;
use crate::milp::MilpStatus;
use crate::query::{DiversityDoc, HardRule, Method, OutcomeDoc, OutcomeKind, QueryDoc, SoftDoc, StrategyDoc};
use crate::scorecard::{DataPoint, Scorecard};
use crate::stats::Dataset;
use crate::synthetic::{credit_samples, credit_scorecard, rejected_applicant};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seed: u64,
    pub features: usize,
    pub bins: usize,
    pub ks: Vec<usize>,
    pub thetas: Vec<usize>,
    pub methods: Vec<Method>,
    pub hard: Vec<HardRule>,
    pub lambdas: Vec<f64>,
    pub time_limit: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            features: 12,
            bins: 5,
            ks: vec![3, 4],
            thetas: vec![2, 3],
            methods: vec![Method::Weighted],
            hard: vec![HardRule::Features, HardRule::Values],
            lambdas: vec![1.0, 0.0, 0.0],
            time_limit: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub theta: usize,
    pub approach: String,
    pub status: MilpStatus,
    pub proximity: Option<f64>,
    pub closeness: Option<f64>,
    pub d_f: Option<usize>,
    pub d_fv: Option<usize>,
    pub pd_min: Option<f64>,
    pub pd_max: Option<f64>,
    pub time: f64,
    /// Per-stage optima of hierarchical runs.
    pub stages: BTreeMap<String, f64>,
}

/// The benchmark instance: scorecard, sample data and rejected applicant.
pub fn instance(cfg: &BenchConfig) -> (Scorecard, Dataset, DataPoint) {
    let sc = credit_scorecard(cfg.features, cfg.bins, cfg.seed);
    let data = credit_samples(&sc, 500, 0.3, cfg.seed.wrapping_add(1));
    let x = rejected_applicant(&sc, cfg.seed.wrapping_add(2));
    (sc, data, x)
}

pub fn query_for(sc: &Scorecard, x: &DataPoint, cfg: &BenchConfig, k: usize, theta: usize, method: Method) -> QueryDoc {
    QueryDoc {
        input: Some(x.to_map(sc)),
        raw_input: None,
        outcome: OutcomeDoc {
            kind: OutcomeKind::Binary,
            value: 1.0,
            relation: None,
        },
        theta,
        lambdas: cfg.lambdas.clone(),
        epsilon: 1e-6,
        actionable: None,
        piecewise: None,
        diversity: (k > 1).then(|| DiversityDoc {
            k,
            hard: cfg.hard.clone(),
            soft: Some(SoftDoc {
                lambda3: Some(0.0),
                lambda4: Some(0.0),
            }),
        }),
        strategy: Some(StrategyDoc {
            method,
            priority: None,
            degradation: None,
        }),
        weights: None,
        ridge: None,
        time_limit: Some(cfg.time_limit),
    }
}

fn approach(method: Method, hard: &[HardRule]) -> String {
    let m = match method {
        Method::Weighted => "weighted",
        Method::Hierarchical => "hierarchical",
    };
    let h: Vec<&str> = hard
        .iter()
        .map(|r| match r {
            HardRule::Features => "F",
            HardRule::Values => "FV",
        })
        .collect();
    if h.is_empty() {
        m.to_string()
    } else {
        format!("{m} {}", h.join("+"))
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let (sc, data, x) = instance(cfg);
    let mut rows = Vec::new();
    for &k in &cfg.ks {
        for &theta in &cfg.thetas {
            for &method in &cfg.methods {
                let doc = query_for(&sc, &x, cfg, k, theta, method);
                let rep = run(&sc, Some(&data), &doc, cfg.time_limit, f64::INFINITY)?;
                let m = rep.metrics.as_ref();
                rows.push(BenchRow {
                    k,
                    theta,
                    approach: approach(method, &cfg.hard),
                    status: rep.status,
                    proximity: m.map(|m| m.proximity),
                    closeness: m.and_then(|m| m.closeness),
                    d_f: m.map(|m| m.d_f),
                    d_fv: m.map(|m| m.d_fv),
                    pd_min: m.map(|m| m.pd_min),
                    pd_max: m.map(|m| m.pd_max),
                    time: rep.timing.total,
                    stages: rep.stages.iter().map(|s| (s.term.clone(), s.optimum)).collect(),
                });
            }
        }
    }
    Ok(rows)
}

/// Comma-separated table with a header row.
pub fn render_csv(rows: &[BenchRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut out = String::from("K,theta,approach,status,proximity,closeness,D_F,D_FV,pd_min,pd_max,time_s,stages\n");
    for r in rows {
        let stages: Vec<String> = r.stages.iter().map(|(t, v)| format!("{t}={v:.6}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:.4},{}",
            r.k,
            r.theta,
            r.approach,
            r.status,
            opt(r.proximity),
            opt(r.closeness),
            r.d_f.map_or(String::new(), |v| v.to_string()),
            r.d_fv.map_or(String::new(), |v| v.to_string()),
            opt(r.pd_min),
            opt(r.pd_max),
            r.time,
            stages.join(";")
        );
    }
    out
}
