//! Known answers on the two-feature reference scorecard: A ∈ {0.4, −0.5}
//! with coefficient 1, B ∈ {1.0, −1.0} with coefficient −1, x = (0, 0).

use scorecf::diversity::{extend_multi, measure_diversity, DiversityConfig};
use scorecf::formulation::{
    build_binary_cf, build_continuous_cf, build_probability_cf, decode_all, CfQuery, Outcome, Relation, TERM_OUTCOME,
};
use scorecf::milp::{solve_milp, MilpStatus, SolverLimits};
use scorecf::multiobjective::solve_weighted;
use scorecf::oracle::{oracle_multi, oracle_single, OracleStatus};
use scorecf::scorecard::{logistic, DataPoint, Scorecard};
use scorecf::stats::{compute_weights, GaussianStats, WeightMethod};

const TOY2: &str = r#"{"version":"1","target_type":"binary","intercept":0,"features":[
  {"name":"A","coefficient":1,"actionable":true,"bins":[
    {"label":"A0","upper":10,"transform_value":0.4},{"label":"A1","lower":10,"transform_value":-0.5}]},
  {"name":"B","coefficient":-1,"actionable":true,"bins":[
    {"label":"B0","upper":5,"transform_value":1.0},{"label":"B1","lower":5,"transform_value":-1.0}]}]}"#;

fn toy(target: &str) -> Scorecard {
    Scorecard::from_json(&TOY2.replace(r#""target_type":"binary""#, &format!(r#""target_type":"{target}""#))).unwrap()
}

fn query(sc: &Scorecard, x: [f64; 2], outcome: Outcome) -> CfQuery {
    let x = DataPoint::new(sc, x.to_vec()).unwrap();
    let w = compute_weights(sc, &x, None, WeightMethod::InverseRange).unwrap();
    CfQuery::new(x, outcome, w)
}

fn limits() -> SolverLimits {
    SolverLimits::default()
}

#[test]
fn probability_ceiling_moves_b() {
    let sc = toy("binary");
    let q = query(
        &sc,
        [0.0, 0.0],
        Outcome::Probability {
            target: 0.45,
            relation: Relation::Le,
        },
    );
    let cf = build_probability_cf(&sc, &q).unwrap();
    let r = solve_milp(&cf.model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    // B→1.0 costs 0.5 and gives φ = −1; A→−0.5 costs 0.5/0.9
    assert!((r.objective_total - 0.5).abs() < 1e-9);
    let c = &decode_all(&sc, &q, &cf, &r, None).unwrap()[0];
    assert_eq!(c.assignment, vec![None, Some(0)]);
    assert_eq!(c.score, -1.0);
    let pwl = cf.pwl.as_ref().unwrap();
    assert!(pwl.eval(c.score) <= 0.45);
    let active: Vec<usize> = cf.blocks[0]
        .s
        .iter()
        .enumerate()
        .filter(|(_, &v)| r.value(v) > 0.5)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(active, vec![pwl.segment_of(c.score)]);
    assert!((c.model_probability.unwrap() - pwl.eval(-1.0)).abs() < 1e-7);
    let oracle = oracle_single(&sc, &q, Some(pwl)).unwrap();
    assert_eq!(oracle.best_assignments, vec![vec![vec![None, Some(0)]]]);
}

#[test]
fn probability_target_met_by_the_input_needs_no_change() {
    let sc = toy("binary");
    let x = [0.4, 1.0];
    let pwl_target = |q: &CfQuery| {
        let cands = sc.candidate_values(&q.x);
        scorecf::formulation::piecewise_for(sc.score_bounds(&q.x, &cands), &q.piecewise)
            .unwrap()
            .eval(-0.6)
    };
    let probe = query(&sc, x, Outcome::Binary { target: true });
    let target = pwl_target(&probe);
    assert!((target - logistic(-0.6)).abs() < 5e-3);
    let q = query(
        &sc,
        x,
        Outcome::Probability {
            target,
            relation: Relation::Closest,
        },
    );
    let cf = build_probability_cf(&sc, &q).unwrap();
    let r = solve_milp(&cf.model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    let c = &decode_all(&sc, &q, &cf, &r, None).unwrap()[0];
    assert!(c.changes.is_empty());
    assert!(c.model_terms[TERM_OUTCOME].abs() < 1e-9);
    assert!(c.proximity.abs() < 1e-12);
}

#[test]
fn continuous_closest_target() {
    let sc = toy("continuous");
    let mut q = query(
        &sc,
        [0.0, 0.0],
        Outcome::Continuous {
            target: 1.2,
            relation: Relation::Closest,
        },
    );
    q.theta = 2;
    q.lambdas = [0.0, 0.0, 1.0];
    let cf = build_continuous_cf(&sc, &q).unwrap();
    let r = solve_milp(&cf.model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    assert!((r.objective_total - 0.2).abs() < 1e-9);
    let c = &decode_all(&sc, &q, &cf, &r, None).unwrap()[0];
    assert!((c.outcome_gap.unwrap() - 0.2).abs() < 1e-12);
    // φ = 1.4 (both changed) and φ = 1.0 (B alone) tie on the gap
    let oracle = oracle_single(&sc, &q, None).unwrap();
    assert!((oracle.best_objective - 0.2).abs() < 1e-12);
    assert!(oracle.best_assignments.contains(&vec![vec![Some(0), Some(1)]]));
    assert!(oracle.best_assignments.contains(&vec![c.assignment.clone()]));
}

#[test]
fn continuous_ceiling_beyond_reach_is_infeasible() {
    let sc = toy("continuous");
    let mut q = query(
        &sc,
        [0.0, 0.0],
        Outcome::Continuous {
            target: 1.5,
            relation: Relation::Ge,
        },
    );
    q.theta = 2;
    let r = solve_milp(&build_continuous_cf(&sc, &q).unwrap().model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Infeasible);
}

#[test]
fn closeness_only_picks_the_point_nearest_the_mean() {
    let sc = toy("binary");
    let mut q = query(&sc, [0.0, 0.0], Outcome::Binary { target: true });
    q.stats =
        Some(GaussianStats::from_covariance(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], Some(0.0)).unwrap());
    q.lambdas = [1.0, 1.0, 0.0];
    let cf = build_binary_cf(&sc, &q).unwrap();
    let r = solve_weighted(&cf.model, &[("closeness", 1.0)], &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    assert!((r.objective_terms["closeness"] - 0.4).abs() < 1e-9);
    let c = &decode_all(&sc, &q, &cf, &r, None).unwrap()[0];
    assert_eq!(c.assignment, vec![Some(0), None]);
}

#[test]
fn three_sets_with_two_changes() {
    let sc = toy("binary");
    let mut q = query(&sc, [0.0, 0.0], Outcome::Binary { target: true });
    q.theta = 2;
    let hard_sets = DiversityConfig {
        hard_feature_sets: true,
        lambda3: 0.0,
        lambda4: 0.0,
        ..DiversityConfig::new(3)
    };
    let cf = extend_multi(&sc, &q, &hard_sets).unwrap();
    let r = solve_milp(&cf.model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Optimal);
    let cfs = decode_all(&sc, &q, &cf, &r, None).unwrap();
    let m = measure_diversity(&cfs, &sc);
    // {A→0.4}, {B→−1}, {A→0.4, B→−1}: feature sets differ 2 + 1 + 1,
    // bin indicators 2 + 1 + 1
    assert_eq!((m.d_f, m.d_fv), (4, 4));
    assert!((r.objective_total - oracle_multi(&sc, &q, None, &hard_sets).unwrap().best_objective).abs() < 1e-9);

    // adding distinct values leaves no third counterfactual
    let both = DiversityConfig {
        hard_feature_values: true,
        ..hard_sets
    };
    let r = solve_milp(&extend_multi(&sc, &q, &both).unwrap().model, &limits()).unwrap();
    assert_eq!(r.status, MilpStatus::Infeasible);
    assert_eq!(
        oracle_multi(&sc, &q, None, &both).unwrap().status,
        OracleStatus::Infeasible
    );
}
