//! Best-bound branch-and-bound over binary variables.
//!
//! The root relaxation is solved once with the two-phase primal simplex.
//! A node popped from the queue applies its binary fixings to a copy of the
//! root problem, installs the optimal basis of its parent and re-optimizes
//! with the dual simplex. It then dives: one child is fixed in place while
//! the sibling is queued. A warm solve that fails numerically, or whose
//! solution has drifted from the model rows, is redone from a fresh basis.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::{Duration, Instant};

use crate::error::Result;

use super::simplex::{Outcome, Params, Snapshot, Tableau};
use super::{LpSolution, LpStatus, MilpModel, MilpResult, MilpStatus, SolverLimits, VarKind};

/// Row violation above which a warm-started node LP is recomputed.
const RESOLVE_TOL: f64 = 1e-6;
/// Open nodes beyond this count are queued without a parent basis.
const MAX_WARM_NODES: usize = 20_000;

/// Solves the LP relaxation (integrality dropped) of `model`.
pub fn solve_lp(model: &MilpModel) -> Result<LpSolution> {
    model.validate()?;
    let limits = SolverLimits::default();
    let mut tab = Tableau::from_model(model);
    let params = Params {
        feas_tol: limits.feas_tol * 0.1,
        deadline: None,
    };
    let outcome = tab.solve_primal(&params)?;
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Infeasible => LpStatus::Infeasible,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::TimeLimit => LpStatus::TimeLimit,
    };
    let (values, objective) = if status == LpStatus::Optimal {
        let v = tab.structural_values();
        let obj = model.objective_value(&v);
        (v, obj)
    } else {
        (Vec::new(), f64::NAN)
    };
    Ok(LpSolution {
        status,
        values,
        objective,
        iterations: tab.iterations,
    })
}

pub fn solve_milp(model: &MilpModel, limits: &SolverLimits) -> Result<MilpResult> {
    solve_milp_from(model, limits, None)
}

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, f64)>,
    warm: Option<Rc<Snapshot>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node,
    // must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    values: Vec<f64>,
    objective: f64,
}

struct Search<'a> {
    model: &'a MilpModel,
    limits: &'a SolverLimits,
    params: Params,
    binaries: Vec<usize>,
    incumbent: Option<Incumbent>,
    iterations: usize,
}

impl Search<'_> {
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            None => f64::INFINITY,
            Some(inc) => inc.objective - self.limits.opt_gap * inc.objective.abs().max(1.0),
        }
    }

    /// Applies fixings to a copy of `base`, optionally installs a basis, and
    /// re-optimizes.
    fn node_lp(
        &mut self,
        base: &Tableau,
        fixes: &[(usize, f64)],
        warm: Option<&Snapshot>,
    ) -> Result<(Tableau, Outcome)> {
        let mut tab = base.clone();
        for &(j, v) in fixes {
            tab.set_bounds(j, v, v);
        }
        if let Some(snap) = warm {
            if tab.restore(snap).is_err() {
                tab = base.clone();
                for &(j, v) in fixes {
                    tab.set_bounds(j, v, v);
                }
            }
        }
        let outcome = self.reoptimize(&mut tab, fixes)?;
        Ok((tab, outcome))
    }

    /// Fixes the last entry of `fixes` on `tab` in place and re-optimizes.
    fn fix(&mut self, tab: &mut Tableau, fixes: &[(usize, f64)]) -> Result<Outcome> {
        let &(j, v) = fixes.last().expect("at least one fixing");
        tab.set_bounds(j, v, v);
        self.reoptimize(tab, fixes)
    }

    /// Dual re-optimization after bound changes. If it fails numerically, or
    /// the tableau no longer reproduces the model rows, the node is solved
    /// again from a fresh slack basis.
    fn reoptimize(&mut self, tab: &mut Tableau, fixes: &[(usize, f64)]) -> Result<Outcome> {
        let before = tab.iterations;
        let warm = tab.reoptimize(&self.params);
        self.iterations += tab.iterations.saturating_sub(before);
        match warm {
            Ok(o @ (Outcome::Optimal | Outcome::Infeasible)) if self.trustworthy(tab, o) => return Ok(o),
            Ok(Outcome::TimeLimit) => return Ok(Outcome::TimeLimit),
            _ => {}
        }
        let mut fresh = Tableau::from_model(self.model);
        for &(j, v) in fixes {
            fresh.set_bounds(j, v, v);
        }
        let outcome = fresh.solve_primal(&self.params)?;
        self.iterations += fresh.iterations;
        *tab = fresh;
        Ok(outcome)
    }

    fn trustworthy(&self, tab: &Tableau, outcome: Outcome) -> bool {
        let n = self.model.variables.len();
        let (x, rows) = tab.x.split_at(n);
        if self.model.row_residual(x, rows) > RESOLVE_TOL {
            return false;
        }
        outcome != Outcome::Optimal || (tab.objective().is_finite() && self.model.relaxed_violation(x) <= RESOLVE_TOL)
    }

    /// Most fractional binary, among those of the highest priority, whose
    /// distance to {0, 1} exceeds `tol`.
    fn most_fractional(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut best: Option<(usize, (u8, f64))> = None;
        for &j in &self.binaries {
            let frac = (x[j] - x[j].round()).abs();
            let key = (self.model.variables[j].priority, frac);
            if frac > tol && best.is_none_or(|(_, k)| key > k) {
                best = Some((j, key));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Snaps binaries to {0, 1}, re-solves for the continuous part and offers
    /// the point as an incumbent. Returns false if the snapped point is not
    /// feasible.
    fn try_incumbent(&mut self, tab: &Tableau) -> Result<bool> {
        let fixes: Vec<(usize, f64)> = self.binaries.iter().map(|&j| (j, tab.x[j].round())).collect();
        let (snapped, outcome) = self.node_lp(tab, &fixes, None)?;
        if outcome != Outcome::Optimal {
            return Ok(false);
        }
        let mut values = snapped.structural_values();
        for &(j, v) in &fixes {
            values[j] = v;
        }
        Ok(self.offer(values))
    }

    fn offer(&mut self, values: Vec<f64>) -> bool {
        if self.model.max_violation(&values) > self.limits.feas_tol {
            return false;
        }
        let objective = self.model.objective_value(&values);
        if self.incumbent.as_ref().is_none_or(|inc| objective < inc.objective) {
            self.incumbent = Some(Incumbent { values, objective });
        }
        true
    }
}

/// Branch-and-bound with an optional starting point; an infeasible start is
/// ignored.
pub fn solve_milp_from(model: &MilpModel, limits: &SolverLimits, start: Option<&[f64]>) -> Result<MilpResult> {
    model.validate()?;
    let started = Instant::now();
    let deadline = started.checked_add(Duration::from_secs_f64(limits.time_limit.clamp(0.0, 1e9)));
    let mut search = Search {
        model,
        limits,
        params: Params {
            feas_tol: limits.feas_tol * 0.1,
            deadline,
        },
        binaries: model
            .variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(j, _)| j)
            .collect(),
        incumbent: None,
        iterations: 0,
    };
    if let Some(s) = start {
        if s.len() == model.variables.len() {
            search.offer(s.to_vec());
        }
    }

    let mut root = Tableau::from_model(model);
    let root_outcome = root.solve_primal(&search.params)?;
    search.iterations += root.iterations;
    let finish = |search: Search, status: MilpStatus, bound: f64, nodes: usize| {
        let (values, objective_total, objective_terms) = match (&search.incumbent, status.has_solution()) {
            (Some(inc), true) => (inc.values.clone(), inc.objective, model.term_values(&inc.values)),
            _ => (Vec::new(), f64::NAN, Default::default()),
        };
        MilpResult {
            status,
            values,
            objective_total,
            objective_terms,
            best_bound: bound,
            nodes_explored: nodes,
            simplex_iterations: search.iterations,
            wall_time: started.elapsed().as_secs_f64(),
        }
    };
    match root_outcome {
        Outcome::Optimal => {}
        Outcome::Infeasible => return Ok(finish(search, MilpStatus::Infeasible, f64::INFINITY, 1)),
        Outcome::Unbounded => return Ok(finish(search, MilpStatus::Unbounded, f64::NEG_INFINITY, 1)),
        Outcome::TimeLimit => {
            let status = if search.incumbent.is_some() {
                MilpStatus::Feasible
            } else {
                MilpStatus::TimeLimit
            };
            return Ok(finish(search, status, f64::NEG_INFINITY, 1));
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: root.objective(),
        seq,
        fixes: Vec::new(),
        warm: None,
    });
    let mut nodes = 0usize;
    let mut limit_hit = false;
    let out_of_budget = |nodes: usize| nodes >= limits.node_limit || deadline.is_some_and(|d| Instant::now() >= d);

    'outer: while let Some(node) = heap.pop() {
        if node.bound >= search.cutoff() {
            continue;
        }
        if out_of_budget(nodes) {
            heap.push(node);
            limit_hit = true;
            break;
        }
        nodes += 1;

        let mut fixes = node.fixes;
        let mut bound = node.bound;
        let (mut tab, mut outcome) = if fixes.is_empty() {
            (root.clone(), Outcome::Optimal)
        } else {
            search.node_lp(&root, &fixes, node.warm.as_deref())?
        };
        // Dive: keep fixing one child on the working tableau, queue the
        // sibling.
        loop {
            match outcome {
                Outcome::Optimal => {}
                Outcome::Infeasible | Outcome::Unbounded => break,
                Outcome::TimeLimit => {
                    heap.push(Node {
                        bound,
                        seq,
                        fixes,
                        warm: None,
                    });
                    limit_hit = true;
                    break 'outer;
                }
            }
            bound = tab.objective();
            if bound >= search.cutoff() {
                break;
            }
            let j = match search.most_fractional(&tab.x, limits.int_tol) {
                Some(j) => j,
                None => {
                    // A relaxation that is integral only within int_tol may
                    // not survive snapping; it is then branched on its
                    // remaining fractionality.
                    if !search.try_incumbent(&tab)? {
                        if let Some(j) = search.most_fractional(&tab.x, 0.0) {
                            for v in [0.0, 1.0] {
                                seq += 1;
                                let mut child = fixes.clone();
                                child.push((j, v));
                                heap.push(Node {
                                    bound,
                                    seq,
                                    fixes: child,
                                    warm: None,
                                });
                            }
                        }
                    }
                    break;
                }
            };
            let dive = if tab.x[j] >= 0.5 { 1.0 } else { 0.0 };
            seq += 1;
            let mut sibling = fixes.clone();
            sibling.push((j, 1.0 - dive));
            let warm = (heap.len() < MAX_WARM_NODES).then(|| Rc::new(tab.snapshot()));
            heap.push(Node {
                bound,
                seq,
                fixes: sibling,
                warm,
            });
            fixes.push((j, dive));
            if out_of_budget(nodes) {
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    fixes,
                    warm: None,
                });
                limit_hit = true;
                break 'outer;
            }
            nodes += 1;
            outcome = search.fix(&mut tab, &fixes)?;
        }
    }

    let status = match (limit_hit, search.incumbent.is_some()) {
        (false, true) => MilpStatus::Optimal,
        (false, false) => MilpStatus::Infeasible,
        (true, true) => MilpStatus::Feasible,
        (true, false) => MilpStatus::TimeLimit,
    };
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let best_bound = match &search.incumbent {
        Some(inc) if !limit_hit => inc.objective,
        Some(inc) => open_bound.min(inc.objective),
        None if limit_hit => open_bound,
        None => f64::INFINITY,
    };
    Ok(finish(search, status, best_bound, nodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{ConstraintSense::*, LinearExpr};

    #[test]
    fn lp_single_bound() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0);
        m.add_constraint("c", LinearExpr::from_terms([(x, 1.0)]), Ge, 3.0);
        m.add_objective_term("obj", LinearExpr::from_terms([(x, 1.0)]), 1.0);
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 3.0).abs() < 1e-12);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lp_infeasible() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint("lo", LinearExpr::from_terms([(x, 1.0)]), Ge, 1.0);
        m.add_constraint("hi", LinearExpr::from_terms([(x, 1.0)]), Le, 0.0);
        assert_eq!(solve_lp(&m).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn lp_simplex_vertex() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 1.0);
        let y = m.add_continuous("y", 0.0, 1.0);
        m.add_constraint("c", LinearExpr::from_terms([(x, 1.0), (y, 1.0)]), Le, 1.0);
        m.add_objective_term("obj", LinearExpr::from_terms([(x, -1.0), (y, -1.0)]), 1.0);
        let s = solve_lp(&m).unwrap();
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.values[0] + s.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_unbounded() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY);
        m.add_objective_term("obj", LinearExpr::from_terms([(x, -1.0)]), 1.0);
        assert_eq!(solve_lp(&m).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn milp_integral_root() {
        let mut m = MilpModel::new();
        let z = m.add_binary("z");
        m.add_objective_term("obj", LinearExpr::from_terms([(z, 1.0)]), 1.0);
        let r = solve_milp(&m, &SolverLimits::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_eq!(r.nodes_explored, 1);
        assert_eq!(r.values, vec![0.0]);
    }

    #[test]
    fn milp_feasibility_only() {
        let mut m = MilpModel::new();
        let a = m.add_binary("z1");
        let b = m.add_binary("z2");
        m.add_constraint("one", LinearExpr::from_terms([(a, 1.0), (b, 1.0)]), Eq, 1.0);
        let r = solve_milp(&m, &SolverLimits::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_eq!(r.values.iter().filter(|v| **v == 1.0).count(), 1);
    }

    #[test]
    fn milp_needs_branching() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 4, 4a + b + 2c <= 5 (binary knapsack)
        let mut m = MilpModel::new();
        let v: Vec<_> = (0..3).map(|i| m.add_binary(format!("z{i}"))).collect();
        m.add_constraint(
            "k1",
            LinearExpr::from_terms([(v[0], 2.0), (v[1], 3.0), (v[2], 1.0)]),
            Le,
            4.0,
        );
        m.add_constraint(
            "k2",
            LinearExpr::from_terms([(v[0], 4.0), (v[1], 1.0), (v[2], 2.0)]),
            Le,
            5.0,
        );
        m.add_objective_term(
            "obj",
            LinearExpr::from_terms([(v[0], -5.0), (v[1], -4.0), (v[2], -3.0)]),
            1.0,
        );
        let r = solve_milp(&m, &SolverLimits::default()).unwrap();
        // enumeration: {a,c}: 2+1<=4, 4+2=6>5 no; {b,c}: 4<=4, 3<=5 -> 7; {a}: 5; {a,b}: 5>4 no
        assert_eq!(r.status, MilpStatus::Optimal);
        assert!((r.objective_total + 7.0).abs() < 1e-9);
    }

    #[test]
    fn milp_infeasible_certificate() {
        let mut m = MilpModel::new();
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_constraint("half", LinearExpr::from_terms([(a, 2.0), (b, 2.0)]), Eq, 1.0);
        let r = solve_milp(&m, &SolverLimits::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Infeasible);
        assert!(r.values.is_empty());
    }

    #[test]
    fn node_limit_downgrades_status() {
        let mut m = MilpModel::new();
        let v: Vec<_> = (0..6).map(|i| m.add_binary(format!("z{i}"))).collect();
        m.add_constraint("odd", LinearExpr::from_terms(v.iter().map(|&z| (z, 2.0))), Eq, 5.0);
        let limits = SolverLimits {
            node_limit: 2,
            ..SolverLimits::default()
        };
        let r = solve_milp(&m, &limits).unwrap();
        assert_eq!(r.status, MilpStatus::TimeLimit);
        assert!(r.values.is_empty());
    }

    #[test]
    fn start_point_is_used_as_incumbent() {
        let mut m = MilpModel::new();
        let v: Vec<_> = (0..4).map(|i| m.add_binary(format!("z{i}"))).collect();
        m.add_constraint("two", LinearExpr::from_terms(v.iter().map(|&z| (z, 1.0))), Ge, 2.0);
        m.add_objective_term(
            "obj",
            LinearExpr::from_terms(v.iter().enumerate().map(|(i, &z)| (z, 1.0 + i as f64 * 0.1))),
            1.0,
        );
        let limits = SolverLimits {
            node_limit: 0,
            ..SolverLimits::default()
        };
        let r = solve_milp_from(&m, &limits, Some(&[1.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.status, MilpStatus::Feasible);
        assert!((r.objective_total - 3.3).abs() < 1e-12);
        let r = solve_milp(&m, &SolverLimits::default()).unwrap();
        assert!((r.objective_total - 2.1).abs() < 1e-12);
    }
}
