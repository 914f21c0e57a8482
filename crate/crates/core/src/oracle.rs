//! Exhaustive enumeration of counterfactual assignments, used to certify the
//! MILP path on small instances.
//!
//! Nothing here is shared with the formulation builder or the solver: the
//! candidate sets, the feasibility predicate and the objective are all
//! evaluated directly from the scorecard and the query.

use serde::Serialize;

use crate::diversity::DiversityConfig;
use crate::error::{Error, Result};
use crate::formulation::{CfQuery, Outcome, PiecewiseApprox, Relation};
use crate::scorecard::Scorecard;

pub const ENUMERATION_CAP: u128 = 10_000_000;
const TIE_TOL: f64 = 1e-9;
const MAX_TIES: usize = 100_000;

/// Chosen bin per feature, `None` for "no change".
pub type Assignment = Vec<Option<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub status: OracleStatus,
    pub best_objective: f64,
    /// Every optimal tuple (one assignment per counterfactual) within 1e-9.
    pub best_assignments: Vec<Vec<Assignment>>,
    /// Single mode: all assignments of the actionable features. Multi mode:
    /// multisets of feasible assignments that pass the hard diversity rules.
    pub enumerated: u64,
}

struct Single {
    assignment: Assignment,
    objective: f64,
}

fn actionable(sc: &Scorecard, q: &CfQuery) -> Result<Vec<bool>> {
    match &q.actionable_override {
        None => Ok(sc.features.iter().map(|f| f.actionable).collect()),
        Some(names) => {
            let mut mask = vec![false; sc.features.len()];
            for n in names {
                let i = sc
                    .features
                    .iter()
                    .position(|f| &f.name == n)
                    .ok_or_else(|| Error::Argument(format!("unknown actionable feature `{n}`")))?;
                mask[i] = true;
            }
            Ok(mask)
        }
    }
}

fn pwl_value(pwl: &PiecewiseApprox, phi: f64) -> f64 {
    let b = &pwl.breakpoints;
    let mut r = 0;
    while r + 1 < pwl.slopes.len() && phi > b[r + 1] {
        r += 1;
    }
    pwl.slopes[r] * phi + pwl.intercepts[r]
}

struct Evaluator<'a> {
    sc: &'a Scorecard,
    q: &'a CfQuery,
    pwl: Option<&'a PiecewiseApprox>,
}

impl Evaluator<'_> {
    /// Objective of a feasible assignment, `None` if infeasible.
    fn evaluate(&self, xp: &[f64], changes: usize) -> Option<f64> {
        let (sc, q) = (self.sc, self.q);
        if changes > q.theta {
            return None;
        }
        let mut phi = sc.intercept;
        for (f, v) in sc.features.iter().zip(xp) {
            phi += f.coefficient * v;
        }
        let gap = match q.outcome {
            Outcome::Binary { target } => {
                let ok = if target { phi >= q.epsilon } else { phi <= 0.0 };
                if !ok {
                    return None;
                }
                0.0
            }
            Outcome::Continuous { target, relation } => match relation {
                Relation::Le if phi > target => return None,
                Relation::Ge if phi < target => return None,
                Relation::Closest => (phi - target).abs(),
                _ => 0.0,
            },
            Outcome::Probability { target, relation } => {
                let f = pwl_value(self.pwl.expect("checked by caller"), phi);
                match relation {
                    Relation::Le if f > target => return None,
                    Relation::Ge if f < target => return None,
                    Relation::Closest => (f - target).abs(),
                    _ => 0.0,
                }
            }
        };
        let x = q.x.values();
        let mut obj = 0.0;
        if q.lambdas[0] > 0.0 {
            let prox: f64 = (0..x.len()).map(|i| q.weights.w[i] * (x[i] - xp[i]).abs()).sum();
            obj += q.lambdas[0] * prox;
        }
        if q.lambdas[1] > 0.0 {
            let st = q.stats.as_ref()?;
            let mut close = 0.0;
            for i in 0..x.len() {
                let mut r = 0.0;
                for j in 0..x.len() {
                    r += st.factor[i][j] * (xp[j] - st.mean[j]);
                }
                close += f64::abs(r);
            }
            obj += q.lambdas[1] * close;
        }
        let has_gap = matches!(
            q.outcome,
            Outcome::Continuous {
                relation: Relation::Closest,
                ..
            } | Outcome::Probability {
                relation: Relation::Closest,
                ..
            }
        );
        if has_gap {
            obj += q.lambdas[2] * gap;
        }
        Some(obj)
    }
}

fn check_inputs(sc: &Scorecard, q: &CfQuery, pwl: Option<&PiecewiseApprox>) -> Result<()> {
    if q.x.values().len() != sc.features.len() || q.weights.w.len() != sc.features.len() {
        return Err(Error::Argument("query does not match the scorecard".into()));
    }
    if matches!(q.outcome, Outcome::Probability { .. }) && pwl.is_none() {
        return Err(Error::Argument(
            "probability queries need the piecewise approximation".into(),
        ));
    }
    if q.lambdas[1] > 0.0 && q.stats.is_none() {
        return Err(Error::Argument("closeness weight without statistics".into()));
    }
    Ok(())
}

/// Per feature, the selectable options: `None` plus every bin whose value
/// differs from the current one (actionable features only).
fn options(sc: &Scorecard, q: &CfQuery) -> Result<Vec<Vec<Option<usize>>>> {
    let mask = actionable(sc, q)?;
    let x = q.x.values();
    Ok(sc
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut o = vec![None];
            if mask[i] {
                o.extend(
                    f.bins
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| (b.transform_value - x[i]).abs() > 1e-12)
                        .map(|(j, _)| Some(j)),
                );
            }
            o
        })
        .collect())
}

fn feasible_singles(sc: &Scorecard, q: &CfQuery, pwl: Option<&PiecewiseApprox>) -> Result<(Vec<Single>, u64)> {
    check_inputs(sc, q, pwl)?;
    let opts = options(sc, q)?;
    let total: u128 = opts.iter().map(|o| o.len() as u128).product();
    if total > ENUMERATION_CAP {
        return Err(Error::Size(format!(
            "{total} assignments exceed the cap of {ENUMERATION_CAP}"
        )));
    }
    let ev = Evaluator { sc, q, pwl };
    let x = q.x.values();
    let p = opts.len();
    let mut idx = vec![0usize; p];
    let mut out = Vec::new();
    let mut count = 0u64;
    loop {
        count += 1;
        let assignment: Assignment = (0..p).map(|i| opts[i][idx[i]]).collect();
        let xp: Vec<f64> = (0..p)
            .map(|i| assignment[i].map_or(x[i], |j| sc.features[i].bins[j].transform_value))
            .collect();
        let changes = assignment.iter().filter(|a| a.is_some()).count();
        if let Some(objective) = ev.evaluate(&xp, changes) {
            out.push(Single { assignment, objective });
        }
        // odometer
        let mut i = 0;
        while i < p {
            idx[i] += 1;
            if idx[i] < opts[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == p {
            break;
        }
    }
    Ok((out, count))
}

struct Best {
    objective: f64,
    ties: Vec<(f64, Vec<Assignment>)>,
}

impl Best {
    fn new() -> Self {
        Self {
            objective: f64::INFINITY,
            ties: Vec::new(),
        }
    }

    fn offer(&mut self, obj: f64, tuple: impl FnOnce() -> Vec<Assignment>) {
        if obj < self.objective - TIE_TOL {
            self.objective = obj;
            self.ties.retain(|(o, _)| *o <= obj + TIE_TOL);
            self.ties.push((obj, tuple()));
        } else if obj <= self.objective + TIE_TOL {
            self.objective = self.objective.min(obj);
            if self.ties.len() < MAX_TIES {
                self.ties.push((obj, tuple()));
            }
        }
    }

    fn finish(self, enumerated: u64) -> OracleResult {
        if self.ties.is_empty() {
            return OracleResult {
                status: OracleStatus::Infeasible,
                best_objective: f64::INFINITY,
                best_assignments: Vec::new(),
                enumerated,
            };
        }
        let best = self.objective;
        OracleResult {
            status: OracleStatus::Optimal,
            best_objective: best,
            best_assignments: self
                .ties
                .into_iter()
                .filter(|(o, _)| *o <= best + TIE_TOL)
                .map(|(_, t)| t)
                .collect(),
            enumerated,
        }
    }
}

/// Best single counterfactual by enumeration. `pwl` is required for
/// probability outcomes and is evaluated exactly as a piecewise function.
pub fn oracle_single(sc: &Scorecard, q: &CfQuery, pwl: Option<&PiecewiseApprox>) -> Result<OracleResult> {
    let (singles, count) = feasible_singles(sc, q, pwl)?;
    let mut best = Best::new();
    for s in &singles {
        best.offer(s.objective, || vec![s.assignment.clone()]);
    }
    Ok(best.finish(count))
}

/// `C(n, k)`, saturating just above the enumeration cap.
fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
        if r > ENUMERATION_CAP {
            return ENUMERATION_CAP + 1;
        }
    }
    r
}

fn pair_ok(a: &Assignment, b: &Assignment, cfg: &DiversityConfig) -> bool {
    if cfg.hard_feature_sets && a.iter().zip(b).all(|(x, y)| x.is_some() == y.is_some()) {
        return false;
    }
    if cfg.hard_feature_values && a.iter().zip(b).any(|(x, y)| x.is_some() && x == y) {
        return false;
    }
    true
}

/// `(feature-set distance, bin-indicator distance)` of two assignments.
fn hamming(a: &Assignment, b: &Assignment) -> (usize, usize) {
    let mut df = 0;
    let mut dfv = 0;
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(i), Some(j)) => {
                if i != j {
                    dfv += 2;
                }
            }
            _ => {
                df += 1;
                dfv += 1;
            }
        }
    }
    (df, dfv)
}

/// Best set of `cfg.k` counterfactuals (a multiset of feasible single
/// assignments) under the hard diversity rules and soft rewards.
pub fn oracle_multi(
    sc: &Scorecard,
    q: &CfQuery,
    pwl: Option<&PiecewiseApprox>,
    cfg: &DiversityConfig,
) -> Result<OracleResult> {
    let (singles, _) = feasible_singles(sc, q, pwl)?;
    let n = singles.len();
    let k = cfg.k;
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let tuples = binomial(n as u128 + k as u128 - 1, k as u128);
    if tuples > ENUMERATION_CAP {
        return Err(Error::Size(format!(
            "{tuples} tuples exceed the cap of {ENUMERATION_CAP}"
        )));
    }
    // Pairwise reward and compatibility, computed once.
    let mut reward = vec![0.0; n * n];
    let mut ok = vec![true; n * n];
    for a in 0..n {
        for b in a..n {
            let (df, dfv) = hamming(&singles[a].assignment, &singles[b].assignment);
            let r = cfg.lambda3 * df as f64 + cfg.lambda4 * dfv as f64;
            let c = pair_ok(&singles[a].assignment, &singles[b].assignment, cfg);
            reward[a * n + b] = r;
            reward[b * n + a] = r;
            ok[a * n + b] = c;
            ok[b * n + a] = c;
        }
    }
    let mut best = Best::new();
    let mut count = 0u64;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        start: usize,
        value: f64,
        k: usize,
        singles: &[Single],
        reward: &[f64],
        ok: &[bool],
        chosen: &mut Vec<usize>,
        best: &mut Best,
        count: &mut u64,
    ) {
        let n = singles.len();
        if chosen.len() == k {
            *count += 1;
            best.offer(value, || {
                chosen.iter().map(|&i| singles[i].assignment.clone()).collect()
            });
            return;
        }
        for c in start..n {
            if chosen.iter().any(|&o| !ok[o * n + c]) {
                continue;
            }
            let gain: f64 = chosen.iter().map(|&o| reward[o * n + c]).sum();
            chosen.push(c);
            recurse(
                c,
                value + singles[c].objective - gain,
                k,
                singles,
                reward,
                ok,
                chosen,
                best,
                count,
            );
            chosen.pop();
        }
    }

    recurse(0, 0.0, k, &singles, &reward, &ok, &mut chosen, &mut best, &mut count);
    Ok(best.finish(count))
}
