//! MILP formulations of the counterfactual problem for binary, probability
//! and continuous outcomes, and decoding of solver output.

mod decode;
pub mod piecewise;

use serde::{Deserialize, Serialize};

use crate::diversity::DiversityConfig;
use crate::error::{Error, Result};
use crate::milp::{ConstraintSense, LinearExpr, MilpModel, VarId};
use crate::scorecard::{Candidate, DataPoint, ScoreBounds, Scorecard, TargetType};
use crate::stats::{GaussianStats, ProximityWeights};

pub use decode::{decode_all, decode_solution, Change, Counterfactual};
pub use piecewise::{piecewise_logistic, PiecewiseApprox, PwlStrategy};

pub const TERM_PROXIMITY: &str = "proximity";
pub const TERM_CLOSENESS: &str = "closeness";
pub const TERM_OUTCOME: &str = "outcome_gap";
pub const TERM_DIVERSITY_F: &str = "diversity_features";
pub const TERM_DIVERSITY_FV: &str = "diversity_values";

/// Models with more variables than this are rejected.
pub const MAX_VARIABLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=", alias = "le")]
    Le,
    #[serde(rename = ">=", alias = "ge")]
    Ge,
    #[serde(rename = "closest")]
    Closest,
}

impl Relation {
    pub fn holds(self, value: f64, target: f64) -> bool {
        match self {
            Relation::Le => value <= target,
            Relation::Ge => value >= target,
            Relation::Closest => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Binary { target: bool },
    Probability { target: f64, relation: Relation },
    Continuous { target: f64, relation: Relation },
}

impl Outcome {
    pub fn has_gap_term(&self) -> bool {
        matches!(
            self,
            Outcome::Probability {
                relation: Relation::Closest,
                ..
            } | Outcome::Continuous {
                relation: Relation::Closest,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseConfig {
    pub strategy: PwlStrategy,
    pub max_segments: usize,
    pub eps_approx: f64,
}

impl Default for PiecewiseConfig {
    fn default() -> Self {
        Self {
            strategy: PwlStrategy::Greedy,
            max_segments: 64,
            eps_approx: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfQuery {
    pub x: DataPoint,
    pub outcome: Outcome,
    pub theta: usize,
    /// Replaces the scorecard's actionable flags when present.
    pub actionable_override: Option<Vec<String>>,
    /// (proximity, closeness, outcome gap).
    pub lambdas: [f64; 3],
    pub epsilon: f64,
    pub weights: ProximityWeights,
    pub stats: Option<GaussianStats>,
    pub piecewise: PiecewiseConfig,
}

impl CfQuery {
    pub fn new(x: DataPoint, outcome: Outcome, weights: ProximityWeights) -> Self {
        Self {
            x,
            outcome,
            theta: 1,
            actionable_override: None,
            lambdas: [1.0, 0.0, 0.0],
            epsilon: 1e-6,
            weights,
            stats: None,
            piecewise: PiecewiseConfig::default(),
        }
    }

    /// Actionability flag per feature after applying the override.
    pub fn actionable_mask(&self, sc: &Scorecard) -> Result<Vec<bool>> {
        match &self.actionable_override {
            None => Ok(sc.features.iter().map(|f| f.actionable).collect()),
            Some(names) => {
                let mut mask = vec![false; sc.num_features()];
                for n in names {
                    let i = sc
                        .feature_index(n)
                        .ok_or_else(|| Error::Argument(format!("unknown actionable feature `{n}`")))?;
                    mask[i] = true;
                }
                Ok(mask)
            }
        }
    }

    pub fn validate(&self, sc: &Scorecard) -> Result<()> {
        let p = sc.num_features();
        if self.x.values().len() != p {
            return Err(Error::Argument("input point does not match the scorecard".into()));
        }
        if self.theta < 1 {
            return Err(Error::Argument("theta must be at least 1".into()));
        }
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Argument("lambdas must be finite and nonnegative".into()));
        }
        if self.lambdas.iter().all(|l| *l == 0.0) {
            return Err(Error::Argument("at least one lambda must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Argument("epsilon must be positive".into()));
        }
        if self.weights.w.len() != p || self.weights.w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Argument(
                "proximity weights must be positive, one per feature".into(),
            ));
        }
        if self.lambdas[1] > 0.0 {
            match &self.stats {
                None => return Err(Error::Build("the closeness term needs sample statistics".into())),
                Some(s) if s.dim() != p => {
                    return Err(Error::Build("statistics dimension does not match the scorecard".into()))
                }
                Some(_) => {}
            }
        }
        match self.outcome {
            Outcome::Binary { .. } | Outcome::Probability { .. } if sc.target_type != TargetType::Binary => {
                return Err(Error::TargetType(
                    "a continuous-target scorecard needs a continuous outcome".into(),
                ))
            }
            Outcome::Continuous { .. } if sc.target_type != TargetType::Continuous => {
                return Err(Error::TargetType(
                    "a binary-target scorecard cannot take a continuous outcome".into(),
                ))
            }
            Outcome::Probability { target, .. } if !(target > 0.0 && target < 1.0) => {
                return Err(Error::Argument("probability target must lie in (0, 1)".into()))
            }
            Outcome::Continuous { target, .. } if !target.is_finite() => {
                return Err(Error::Argument("continuous target must be finite".into()))
            }
            _ => {}
        }
        self.actionable_mask(sc)?;
        Ok(())
    }
}

/// Variables of one counterfactual copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CfBlock {
    pub x_prime: Vec<VarId>,
    /// Per feature, the bin indicator of each candidate.
    pub z: Vec<Vec<VarId>>,
    pub a: Vec<VarId>,
    pub t_plus: Vec<VarId>,
    pub t_minus: Vec<VarId>,
    pub m_plus: Vec<VarId>,
    pub m_minus: Vec<VarId>,
    pub q: Option<(VarId, VarId)>,
    pub f: Option<VarId>,
    pub h: Vec<VarId>,
    pub s: Vec<VarId>,
}

/// XOR indicator over a pair of counterfactuals `(k, l)`, `k < l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairVar {
    pub k: usize,
    pub l: usize,
    pub feature: usize,
    /// Candidate position for value indicators; `None` for feature indicators.
    pub candidate: Option<usize>,
    pub var: VarId,
}

/// A built model together with the handles needed to decode it.
#[derive(Debug, Clone)]
pub struct CfModel {
    pub model: MilpModel,
    pub blocks: Vec<CfBlock>,
    pub u: Vec<PairVar>,
    pub d: Vec<PairVar>,
    pub candidates: Vec<Vec<Candidate>>,
    pub bounds: ScoreBounds,
    pub actionable: Vec<bool>,
    pub pwl: Option<PiecewiseApprox>,
}

pub fn build_binary_cf(sc: &Scorecard, q: &CfQuery) -> Result<CfModel> {
    if !matches!(q.outcome, Outcome::Binary { .. }) {
        return Err(Error::Argument("expected a binary outcome".into()));
    }
    build(sc, q, 1, None)
}

pub fn build_probability_cf(sc: &Scorecard, q: &CfQuery) -> Result<CfModel> {
    if !matches!(q.outcome, Outcome::Probability { .. }) {
        return Err(Error::Argument("expected a probability outcome".into()));
    }
    build(sc, q, 1, None)
}

pub fn build_continuous_cf(sc: &Scorecard, q: &CfQuery) -> Result<CfModel> {
    if !matches!(q.outcome, Outcome::Continuous { .. }) {
        return Err(Error::Argument("expected a continuous outcome".into()));
    }
    build(sc, q, 1, None)
}

/// Builds the approximation used by probability queries on the given score
/// bounds. A degenerate range is widened to keep the interval non-empty.
pub fn piecewise_for(bounds: ScoreBounds, cfg: &PiecewiseConfig) -> Result<PiecewiseApprox> {
    let (mut lo, mut hi) = (bounds.min, bounds.max);
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    piecewise_logistic(lo, hi, cfg.max_segments, cfg.strategy, Some(cfg.eps_approx))
}

/// Builds `k` copies of the single-counterfactual model, linked by the
/// diversity constraints and rewards when `k > 1`.
pub(crate) fn build(sc: &Scorecard, q: &CfQuery, k: usize, div: Option<&DiversityConfig>) -> Result<CfModel> {
    q.validate(sc)?;
    let p = sc.num_features();
    let x = q.x.values();
    let candidates = sc.candidate_values(&q.x);
    let bounds = sc.score_bounds(&q.x, &candidates);
    let actionable = q.actionable_mask(sc)?;
    let pwl = match q.outcome {
        Outcome::Probability { .. } => {
            let pwl = piecewise_for(bounds, &q.piecewise)?;
            if pwl.lower() > bounds.min || pwl.upper() < bounds.max {
                return Err(Error::Build("piecewise interval does not cover the score range".into()));
            }
            Some(pwl)
        }
        _ => None,
    };

    let estimate = k
        * (p * 5 + candidates.iter().map(Vec::len).sum::<usize>() + pwl.as_ref().map_or(3, |w| 2 * w.segments() + 3))
        + k * k.saturating_sub(1) / 2 * (p + candidates.iter().map(Vec::len).sum::<usize>());
    if estimate > MAX_VARIABLES {
        return Err(Error::Build(format!(
            "model would have about {estimate} variables, above the limit of {MAX_VARIABLES}; export it with dump-lp and use an external solver"
        )));
    }

    let mut m = MilpModel::new();
    let mut blocks = Vec::with_capacity(k);
    let mut proximity = LinearExpr::new();
    let mut closeness = LinearExpr::new();
    let mut gap = LinearExpr::new();
    let sfx = |kk: usize| if k > 1 { format!("_k{kk}") } else { String::new() };

    for kk in 0..k {
        let s = sfx(kk);
        let mut b = CfBlock {
            x_prime: Vec::with_capacity(p),
            z: Vec::with_capacity(p),
            a: Vec::with_capacity(p),
            t_plus: Vec::with_capacity(p),
            t_minus: Vec::with_capacity(p),
            m_plus: Vec::new(),
            m_minus: Vec::new(),
            q: None,
            f: None,
            h: Vec::new(),
            s: Vec::new(),
        };
        for i in 0..p {
            let name = &sc.features[i].name;
            let (lo, hi) = candidates[i]
                .iter()
                .map(|c| c.value)
                .chain([x[i]])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let xp = m.add_continuous(format!("x'[{name}]{s}"), lo, hi);
            let zs: Vec<VarId> = candidates[i]
                .iter()
                .map(|c| m.add_binary(format!("z[{name},{}]{s}", sc.features[i].bins[c.bin].label)))
                .collect();
            let a = m.add_binary(format!("a[{name}]{s}"));
            if !actionable[i] || candidates[i].is_empty() {
                m.variables[a.0].upper = 0.0;
            }
            let tp = m.add_continuous(format!("t+[{name}]{s}"), 0.0, f64::INFINITY);
            let tm = m.add_continuous(format!("t-[{name}]{s}"), 0.0, f64::INFINITY);

            // t⁺ − t⁻ = x − x′
            m.add_constraint(
                format!("dist[{name}]{s}"),
                LinearExpr::from_terms([(tp, 1.0), (tm, -1.0), (xp, 1.0)]),
                ConstraintSense::Eq,
                x[i],
            );
            // x′ = x + Σ (v_j − x) z_j
            let mut pin = LinearExpr::from_terms([(xp, 1.0)]);
            for (c, &z) in candidates[i].iter().zip(&zs) {
                pin.add(z, -(c.value - x[i]));
            }
            m.add_constraint(format!("pin[{name}]{s}"), pin, ConstraintSense::Eq, x[i]);
            // a = Σ z
            let mut link = LinearExpr::from_terms([(a, 1.0)]);
            for &z in &zs {
                link.add(z, -1.0);
            }
            m.add_constraint(format!("change[{name}]{s}"), link, ConstraintSense::Eq, 0.0);
            // t⁺ ≥ Σ_{v < x} (x − v) z and t⁻ ≥ Σ_{v > x} (v − x) z: exact at
            // integral z, much tighter in the relaxation.
            let mut down = LinearExpr::from_terms([(tp, 1.0)]);
            let mut up = LinearExpr::from_terms([(tm, 1.0)]);
            for (c, &z) in candidates[i].iter().zip(&zs) {
                if c.value < x[i] {
                    down.add(z, -(x[i] - c.value));
                } else {
                    up.add(z, -(c.value - x[i]));
                }
            }
            m.add_constraint(format!("move_down[{name}]{s}"), down, ConstraintSense::Ge, 0.0);
            m.add_constraint(format!("move_up[{name}]{s}"), up, ConstraintSense::Ge, 0.0);
            m.set_priority(a, 2);
            for &z in &zs {
                m.set_priority(z, 1);
            }

            proximity.add(tp, q.weights.w[i]).add(tm, q.weights.w[i]);
            b.x_prime.push(xp);
            b.z.push(zs);
            b.a.push(a);
            b.t_plus.push(tp);
            b.t_minus.push(tm);
        }
        m.add_constraint(
            format!("sparsity{s}"),
            LinearExpr::from_terms(b.a.iter().map(|&a| (a, 1.0))),
            ConstraintSense::Le,
            q.theta as f64,
        );

        if q.lambdas[1] > 0.0 {
            let st = q.stats.as_ref().expect("validated");
            for i in 0..p {
                let mp = m.add_continuous(format!("m+[{i}]{s}"), 0.0, f64::INFINITY);
                let mm = m.add_continuous(format!("m-[{i}]{s}"), 0.0, f64::INFINITY);
                // m⁺ − m⁻ = Σ_{j ≤ i} F_ij (x′_j − μ_j)
                let mut row = LinearExpr::from_terms([(mp, 1.0), (mm, -1.0)]);
                let mut rhs = 0.0;
                for j in 0..=i {
                    let fij = st.factor[i][j];
                    if fij != 0.0 {
                        row.add(b.x_prime[j], -fij);
                        rhs -= fij * st.mean[j];
                    }
                }
                m.add_constraint(format!("manifold[{i}]{s}"), row, ConstraintSense::Eq, rhs);
                closeness.add(mp, 1.0).add(mm, 1.0);
                b.m_plus.push(mp);
                b.m_minus.push(mm);
            }
        }

        let mut phi = LinearExpr::from_terms(b.x_prime.iter().zip(&sc.features).map(|(&v, f)| (v, f.coefficient)));
        phi.constant = sc.intercept;
        match q.outcome {
            Outcome::Binary { target: true } => {
                m.add_constraint(format!("validity{s}"), phi, ConstraintSense::Ge, q.epsilon)
            }
            Outcome::Binary { target: false } => {
                m.add_constraint(format!("validity{s}"), phi, ConstraintSense::Le, 0.0)
            }
            Outcome::Continuous { target, relation } => match relation {
                Relation::Le => m.add_constraint(format!("validity{s}"), phi, ConstraintSense::Le, target),
                Relation::Ge => m.add_constraint(format!("validity{s}"), phi, ConstraintSense::Ge, target),
                Relation::Closest => {
                    let qp = m.add_continuous(format!("q+{s}"), 0.0, f64::INFINITY);
                    let qm = m.add_continuous(format!("q-{s}"), 0.0, f64::INFINITY);
                    // q⁺ − q⁻ = φ − y′
                    let mut row = phi;
                    row.add(qp, -1.0).add(qm, 1.0);
                    m.add_constraint(format!("gap{s}"), row, ConstraintSense::Eq, target);
                    gap.add(qp, 1.0).add(qm, 1.0);
                    b.q = Some((qp, qm));
                }
            },
            Outcome::Probability { target, relation } => {
                let w = pwl.as_ref().expect("built above");
                let f = m.add_continuous(format!("f{s}"), 0.0, 1.0);
                let mut sum_h = phi;
                let mut approx = LinearExpr::from_terms([(f, -1.0)]);
                let mut one = LinearExpr::new();
                for r in 0..w.segments() {
                    let (lo, hi) = (w.breakpoints[r], w.breakpoints[r + 1]);
                    let h = m.add_continuous(format!("h[{r}]{s}"), lo.min(0.0), hi.max(0.0));
                    let sr = m.add_binary(format!("s[{r}]{s}"));
                    m.add_constraint(
                        format!("seg_lo[{r}]{s}"),
                        LinearExpr::from_terms([(h, 1.0), (sr, -lo)]),
                        ConstraintSense::Ge,
                        0.0,
                    );
                    m.add_constraint(
                        format!("seg_hi[{r}]{s}"),
                        LinearExpr::from_terms([(h, 1.0), (sr, -hi)]),
                        ConstraintSense::Le,
                        0.0,
                    );
                    sum_h.add(h, -1.0);
                    approx.add(h, w.slopes[r]).add(sr, w.intercepts[r]);
                    one.add(sr, 1.0);
                    b.h.push(h);
                    b.s.push(sr);
                }
                // Σ h_r = φ
                m.add_constraint(format!("pwl_sum{s}"), sum_h, ConstraintSense::Eq, 0.0);
                m.add_constraint(format!("pwl_value{s}"), approx, ConstraintSense::Eq, 0.0);
                m.add_constraint(format!("pwl_one{s}"), one, ConstraintSense::Eq, 1.0);
                match relation {
                    Relation::Le => m.add_constraint(
                        format!("validity{s}"),
                        LinearExpr::from_terms([(f, 1.0)]),
                        ConstraintSense::Le,
                        target,
                    ),
                    Relation::Ge => m.add_constraint(
                        format!("validity{s}"),
                        LinearExpr::from_terms([(f, 1.0)]),
                        ConstraintSense::Ge,
                        target,
                    ),
                    Relation::Closest => {
                        let qp = m.add_continuous(format!("q+{s}"), 0.0, 1.0);
                        let qm = m.add_continuous(format!("q-{s}"), 0.0, 1.0);
                        m.add_constraint(
                            format!("gap{s}"),
                            LinearExpr::from_terms([(qp, 1.0), (qm, -1.0), (f, -1.0)]),
                            ConstraintSense::Eq,
                            -target,
                        );
                        gap.add(qp, 1.0).add(qm, 1.0);
                        b.q = Some((qp, qm));
                    }
                }
                b.f = Some(f);
            }
        }
        blocks.push(b);
    }
    // The copies are interchangeable; order them by proximity.
    for kk in 1..k {
        let mut order = LinearExpr::new();
        for i in 0..p {
            let w = q.weights.w[i];
            order.add(blocks[kk - 1].t_plus[i], w).add(blocks[kk - 1].t_minus[i], w);
            order.add(blocks[kk].t_plus[i], -w).add(blocks[kk].t_minus[i], -w);
        }
        m.add_constraint(format!("order_k{kk}"), order, ConstraintSense::Le, 0.0);
    }

    m.add_objective_term(TERM_PROXIMITY, proximity, q.lambdas[0]);
    if q.lambdas[1] > 0.0 {
        m.add_objective_term(TERM_CLOSENESS, closeness, q.lambdas[1]);
    }
    if q.outcome.has_gap_term() {
        m.add_objective_term(TERM_OUTCOME, gap, q.lambdas[2]);
    }

    let mut out = CfModel {
        model: m,
        blocks,
        u: Vec::new(),
        d: Vec::new(),
        candidates,
        bounds,
        actionable,
        pwl,
    };
    if let Some(cfg) = div {
        crate::diversity::add_diversity(&mut out, sc, cfg);
    }
    if out.model.variables.len() > MAX_VARIABLES {
        return Err(Error::Build(format!(
            "model has {} variables, above the limit of {MAX_VARIABLES}; export it with dump-lp and use an external solver",
            out.model.variables.len()
        )));
    }
    Ok(out)
}
