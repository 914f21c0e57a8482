//! Multiple simultaneous counterfactuals linked by Hamming-distance
//! diversity constraints and rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{build, CfModel, CfQuery, Counterfactual, PairVar, TERM_DIVERSITY_F, TERM_DIVERSITY_FV};
use crate::milp::{ConstraintSense, LinearExpr, MilpModel, MilpResult, VarId};
use crate::scorecard::Scorecard;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub k: usize,
    /// Every pair must differ in the set of changed features.
    pub hard_feature_sets: bool,
    /// Two counterfactuals changing the same feature must pick different bins.
    pub hard_feature_values: bool,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl DiversityConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            hard_feature_sets: false,
            hard_feature_values: false,
            lambda3: 0.1,
            lambda4: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Argument("diversity needs k >= 2".into()));
        }
        if [self.lambda3, self.lambda4].iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Argument(
                "diversity weights must be finite and nonnegative".into(),
            ));
        }
        if !self.hard_feature_sets && !self.hard_feature_values && self.lambda3 == 0.0 && self.lambda4 == 0.0 {
            return Err(Error::Build(
                "k > 1 needs a hard diversity constraint or a positive diversity weight".into(),
            ));
        }
        Ok(())
    }

    /// Notes when the largest possible diversity reward exceeds one unit of
    /// proximity per counterfactual, which can push solutions towards
    /// changing as many features as possible.
    pub fn warnings(&self, p: usize, candidates: usize) -> Vec<String> {
        let pairs = (self.k * (self.k - 1) / 2) as f64;
        let reward = pairs * (self.lambda3 * p as f64 + self.lambda4 * candidates as f64);
        if reward > self.k as f64 {
            vec![format!(
                "diversity rewards can reach {reward:.3}, more than the proximity scale {}; consider smaller lambda3/lambda4",
                self.k
            )]
        } else {
            Vec::new()
        }
    }
}

/// Builds `cfg.k` counterfactual copies with the diversity linkage.
pub fn extend_multi(sc: &Scorecard, q: &CfQuery, cfg: &DiversityConfig) -> Result<CfModel> {
    cfg.validate()?;
    build(sc, q, cfg.k, Some(cfg))
}

/// `w = |x − y|` for binaries via the four linear inequalities.
fn add_xor(m: &mut MilpModel, name: &str, w: VarId, x: VarId, y: VarId) {
    use ConstraintSense::*;
    m.add_constraint(
        format!("{name}.1"),
        LinearExpr::from_terms([(w, 1.0), (x, -1.0), (y, -1.0)]),
        Le,
        0.0,
    );
    m.add_constraint(
        format!("{name}.2"),
        LinearExpr::from_terms([(w, 1.0), (x, -1.0), (y, 1.0)]),
        Ge,
        0.0,
    );
    m.add_constraint(
        format!("{name}.3"),
        LinearExpr::from_terms([(w, 1.0), (x, 1.0), (y, -1.0)]),
        Ge,
        0.0,
    );
    m.add_constraint(
        format!("{name}.4"),
        LinearExpr::from_terms([(w, 1.0), (x, 1.0), (y, 1.0)]),
        Le,
        2.0,
    );
}

pub(crate) fn add_diversity(cf: &mut CfModel, sc: &Scorecard, cfg: &DiversityConfig) {
    let k = cf.blocks.len();
    let p = sc.num_features();
    let want_u = cfg.hard_feature_sets || cfg.lambda3 > 0.0;
    let want_d = cfg.hard_feature_values || cfg.lambda4 > 0.0;
    let mut reward_u = LinearExpr::new();
    let mut reward_d = LinearExpr::new();
    for kk in 0..k {
        for l in kk + 1..k {
            let mut pair_u = LinearExpr::new();
            for i in 0..p {
                let name = &sc.features[i].name;
                if want_u {
                    let u = cf.model.add_binary(format!("u[{kk},{l},{name}]"));
                    add_xor(
                        &mut cf.model,
                        &format!("xor_u[{kk},{l},{name}]"),
                        u,
                        cf.blocks[kk].a[i],
                        cf.blocks[l].a[i],
                    );
                    pair_u.add(u, 1.0);
                    reward_u.add(u, -1.0);
                    cf.u.push(PairVar {
                        k: kk,
                        l,
                        feature: i,
                        candidate: None,
                        var: u,
                    });
                }
                if want_d {
                    let mut same_feature = LinearExpr::new();
                    for j in 0..cf.candidates[i].len() {
                        let label = &sc.features[i].bins[cf.candidates[i][j].bin].label;
                        let d = cf.model.add_binary(format!("d[{kk},{l},{name},{label}]"));
                        let (zk, zl) = (cf.blocks[kk].z[i][j], cf.blocks[l].z[i][j]);
                        add_xor(&mut cf.model, &format!("xor_d[{kk},{l},{name},{label}]"), d, zk, zl);
                        same_feature.add(d, 1.0);
                        reward_d.add(d, -1.0);
                        cf.d.push(PairVar {
                            k: kk,
                            l,
                            feature: i,
                            candidate: Some(j),
                            var: d,
                        });
                    }
                    if cfg.hard_feature_values && !cf.candidates[i].is_empty() {
                        // Σ_j d ≥ a_k + a_l − 1
                        same_feature.add(cf.blocks[kk].a[i], -1.0).add(cf.blocks[l].a[i], -1.0);
                        cf.model.add_constraint(
                            format!("distinct_values[{kk},{l},{name}]"),
                            same_feature,
                            ConstraintSense::Ge,
                            -1.0,
                        );
                    }
                }
            }
            if cfg.hard_feature_sets {
                cf.model
                    .add_constraint(format!("distinct_sets[{kk},{l}]"), pair_u, ConstraintSense::Ge, 1.0);
            }
        }
    }
    if cfg.hard_feature_values {
        // Each copy picks at most one bin per feature, so distinct values
        // means no bin is picked twice: Σ_k z_kij ≤ 1. Same integer points,
        // tighter relaxation.
        for i in 0..p {
            for j in 0..cf.candidates[i].len() {
                let label = &sc.features[i].bins[cf.candidates[i][j].bin].label;
                let once = LinearExpr::from_terms(cf.blocks.iter().map(|b| (b.z[i][j], 1.0)));
                cf.model.add_constraint(
                    format!("bin_once[{},{label}]", sc.features[i].name),
                    once,
                    ConstraintSense::Le,
                    1.0,
                );
            }
        }
    }
    if cfg.lambda3 > 0.0 {
        cf.model.add_objective_term(TERM_DIVERSITY_F, reward_u, cfg.lambda3);
    }
    if cfg.lambda4 > 0.0 {
        cf.model.add_objective_term(TERM_DIVERSITY_FV, reward_d, cfg.lambda4);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiversityMetrics {
    pub d_f: usize,
    pub d_fv: usize,
    pub pairwise_f: Vec<Vec<usize>>,
    pub pairwise_fv: Vec<Vec<usize>>,
}

/// Hamming distances between the changed-feature and chosen-bin indicator
/// vectors of every pair.
pub fn measure_diversity(cfs: &[Counterfactual], sc: &Scorecard) -> DiversityMetrics {
    let k = cfs.len();
    let p = sc.num_features();
    let mut pf = vec![vec![0; k]; k];
    let mut pfv = vec![vec![0; k]; k];
    for a in 0..k {
        for b in 0..a {
            let (mut df, mut dfv) = (0, 0);
            for i in 0..p {
                match (cfs[a].assignment[i], cfs[b].assignment[i]) {
                    (None, None) => {}
                    (Some(x), Some(y)) if x == y => {}
                    (Some(_), Some(_)) => dfv += 2,
                    _ => {
                        df += 1;
                        dfv += 1;
                    }
                }
            }
            pf[a][b] = df;
            pf[b][a] = df;
            pfv[a][b] = dfv;
            pfv[b][a] = dfv;
        }
    }
    let lower = |m: &Vec<Vec<usize>>| {
        (0..k)
            .flat_map(|a| (0..a).map(move |b| (a, b)))
            .map(|(a, b)| m[a][b])
            .sum()
    };
    DiversityMetrics {
        d_f: lower(&pf),
        d_fv: lower(&pfv),
        pairwise_f: pf,
        pairwise_fv: pfv,
    }
}

/// Sums of the model's u and d indicators in a solution.
pub fn internal_sums(cf: &CfModel, result: &MilpResult) -> (f64, f64) {
    let s = |v: &[PairVar]| v.iter().map(|p| result.value(p.var)).sum();
    (s(&cf.u), s(&cf.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{decode_all, Outcome};
    use crate::milp::{solve_milp, MilpStatus, SolverLimits};
    use crate::scorecard::tests::toy2;
    use crate::scorecard::DataPoint;
    use crate::stats::{compute_weights, WeightMethod};

    fn toy_query() -> (Scorecard, CfQuery) {
        let sc = toy2();
        let x = DataPoint::new(&sc, vec![0.0, 0.0]).unwrap();
        let w = compute_weights(&sc, &x, None, WeightMethod::InverseRange).unwrap();
        (sc, CfQuery::new(x, Outcome::Binary { target: true }, w))
    }

    #[test]
    fn two_distinct_feature_sets() {
        let (sc, q) = toy_query();
        let cfg = DiversityConfig {
            hard_feature_sets: true,
            lambda3: 0.0,
            lambda4: 0.0,
            ..DiversityConfig::new(2)
        };
        let cf = extend_multi(&sc, &q, &cfg).unwrap();
        let r = solve_milp(&cf.model, &SolverLimits::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        let cfs = decode_all(&sc, &q, &cf, &r, None).unwrap();
        assert_eq!(cfs[0].assignment, vec![Some(0), None]);
        assert_eq!(cfs[1].assignment, vec![None, Some(1)]);
        assert!((r.objective_total - (0.4 / 0.9 + 0.5)).abs() < 1e-9);
        let m = measure_diversity(&cfs, &sc);
        assert_eq!((m.d_f, m.d_fv), (2, 2));
        assert_eq!(internal_sums(&cf, &r).0, 2.0);
    }

    #[test]
    fn needs_some_diversity() {
        let (sc, q) = toy_query();
        let cfg = DiversityConfig {
            lambda3: 0.0,
            lambda4: 0.0,
            ..DiversityConfig::new(2)
        };
        assert!(matches!(extend_multi(&sc, &q, &cfg), Err(Error::Build(_))));
        assert!(extend_multi(&sc, &q, &DiversityConfig::new(1)).is_err());
    }

    #[test]
    fn single_candidate_cannot_repeat() {
        // Only feature A can flip the outcome and it has one candidate.
        let (sc, mut q) = toy_query();
        q.actionable_override = Some(vec!["A".into()]);
        let cfg = DiversityConfig {
            hard_feature_values: true,
            lambda3: 0.0,
            lambda4: 0.0,
            ..DiversityConfig::new(2)
        };
        let cf = extend_multi(&sc, &q, &cfg).unwrap();
        let r = solve_milp(&cf.model, &SolverLimits::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Infeasible);
    }

    #[test]
    fn hamming_arithmetic() {
        let (sc, q) = toy_query();
        let cf = crate::formulation::build_binary_cf(&sc, &q).unwrap();
        let r = solve_milp(&cf.model, &SolverLimits::default()).unwrap();
        let one = crate::formulation::decode_solution(&sc, &q, &cf, &r, 0, None).unwrap();
        let m = measure_diversity(&[one.clone(), one.clone()], &sc);
        assert_eq!((m.d_f, m.d_fv), (0, 0));
        let mut other = one.clone();
        other.assignment = vec![Some(1), None];
        let m = measure_diversity(&[one.clone(), other.clone()], &sc);
        assert_eq!((m.d_f, m.d_fv), (0, 2));
        other.assignment = vec![Some(0), Some(1)];
        let m = measure_diversity(&[one.clone(), other.clone()], &sc);
        assert_eq!((m.d_f, m.d_fv), (1, 1));
        other.assignment = vec![None, Some(1)];
        let m = measure_diversity(&[one, other], &sc);
        assert_eq!((m.d_f, m.d_fv), (2, 2));
        assert_eq!(m.pairwise_f, vec![vec![0, 2], vec![2, 0]]);
    }
}
