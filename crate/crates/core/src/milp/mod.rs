//! Solver-agnostic mixed-integer linear model plus a bundled exact solver.
//!
//! Models are minimize-only; maximization terms are negated when they are
//! built. The objective is a list of named linear terms, each with a weight,
//! so that the same model can be solved with blended weights or one term at
//! a time.

mod bnb;
mod lp_format;
mod simplex;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bnb::{solve_lp, solve_milp, solve_milp_from};
pub use lp_format::write_lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    /// Branching prefers fractional binaries of higher priority.
    pub priority: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for ConstraintSense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintSense::Le => "<=",
            ConstraintSense::Eq => "=",
            ConstraintSense::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (VarId, f64)>) -> Self {
        let mut e = Self::new();
        for (v, c) in terms {
            e.add(v, c);
        }
        e
    }

    pub fn add(&mut self, var: VarId, coef: f64) -> &mut Self {
        self.terms.push((var, coef));
        self
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Merges duplicate variables and drops zero coefficients.
    fn normalized(&self) -> Vec<(VarId, f64)> {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        merged.into_iter().filter(|(_, c)| *c != 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coefficients: Vec<(VarId, f64)>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coefficients.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.sense {
            ConstraintSense::Le => (a - self.rhs).max(0.0),
            ConstraintSense::Ge => (self.rhs - a).max(0.0),
            ConstraintSense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerm {
    pub name: String,
    pub expr: LinearExpr,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<ObjectiveTerm>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
            priority: 0,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn set_priority(&mut self, v: VarId, priority: u8) {
        self.variables[v.0].priority = priority;
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, expr: LinearExpr, sense: ConstraintSense, rhs: f64) {
        // Constants move to the right-hand side.
        self.constraints.push(Constraint {
            name: name.into(),
            coefficients: expr.normalized(),
            sense,
            rhs: rhs - expr.constant,
        });
    }

    pub fn add_objective_term(&mut self, name: impl Into<String>, expr: LinearExpr, weight: f64) {
        self.objective.push(ObjectiveTerm {
            name: name.into(),
            expr,
            weight,
        });
    }

    pub fn term(&self, name: &str) -> Option<&ObjectiveTerm> {
        self.objective.iter().find(|t| t.name == name)
    }

    pub fn term_names(&self) -> Vec<&str> {
        self.objective.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Sets the weight of every term: named terms get the given weight, the
    /// rest get zero.
    pub fn set_weights(&mut self, weights: &[(&str, f64)]) -> Result<()> {
        for (name, _) in weights {
            if self.term(name).is_none() {
                return Err(Error::Argument(format!("model has no objective term `{name}`")));
            }
        }
        for t in &mut self.objective {
            t.weight = weights.iter().find(|(n, _)| *n == t.name).map_or(0.0, |(_, w)| *w);
        }
        Ok(())
    }

    /// Dense cost vector and constant of the weighted objective.
    pub fn cost_vector(&self) -> (Vec<f64>, f64) {
        let mut c = vec![0.0; self.variables.len()];
        let mut constant = 0.0;
        for t in &self.objective {
            constant += t.weight * t.expr.constant;
            for &(v, coef) in &t.expr.terms {
                c[v.0] += t.weight * coef;
            }
        }
        (c, constant)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|t| t.weight * t.expr.eval(values)).sum()
    }

    pub fn term_values(&self, values: &[f64]) -> BTreeMap<String, f64> {
        self.objective
            .iter()
            .map(|t| (t.name.clone(), t.expr.eval(values)))
            .collect()
    }

    /// Largest violation of any constraint, variable bound, or integrality
    /// requirement. Evaluated directly from the model, independent of the
    /// solver's internal state.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(values));
        let bounds = self.variables.iter().zip(values).map(|(v, &x)| {
            let b = (v.lower - x).max(x - v.upper).max(0.0);
            match v.kind {
                VarKind::Binary => b.max((x - x.round()).abs()),
                VarKind::Continuous => b,
            }
        });
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Largest mismatch between row activities and the logical values
    /// `rows` reported by a solver for them.
    pub(crate) fn row_residual(&self, values: &[f64], rows: &[f64]) -> f64 {
        self.constraints
            .iter()
            .zip(rows)
            .map(|(c, &r)| (c.activity(values) - r).abs() / (1.0 + r.abs()))
            .fold(0.0, f64::max)
    }

    /// Largest row or bound violation, ignoring integrality.
    pub(crate) fn relaxed_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(values));
        let bounds = self
            .variables
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.variables.len();
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::InvalidModel(format!("variable `{}` has empty bounds", v.name)));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(Error::InvalidModel(format!(
                    "variable `{}` has an unusable bound",
                    v.name
                )));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(Error::InvalidModel(format!(
                    "binary `{}` has bounds outside [0, 1]",
                    v.name
                )));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "constraint `{}` has a non-finite rhs",
                    c.name
                )));
            }
            for &(v, coef) in &c.coefficients {
                if v.0 >= n {
                    return Err(Error::InvalidModel(format!(
                        "constraint `{}` references an undeclared variable",
                        c.name
                    )));
                }
                if !coef.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "constraint `{}` has a non-finite coefficient",
                        c.name
                    )));
                }
            }
        }
        for t in &self.objective {
            if !t.weight.is_finite() || !t.expr.constant.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "objective term `{}` is not finite",
                    t.name
                )));
            }
            for &(v, coef) in &t.expr.terms {
                if v.0 >= n || !coef.is_finite() {
                    return Err(Error::InvalidModel(format!("objective term `{}` is malformed", t.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverLimits {
    /// Wall-clock limit in seconds.
    pub time_limit: f64,
    pub node_limit: usize,
    pub feas_tol: f64,
    pub int_tol: f64,
    /// Relative optimality gap used for pruning.
    pub opt_gap: f64,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            time_limit: 30.0,
            node_limit: 1_000_000,
            feas_tol: 1e-7,
            int_tol: 1e-6,
            opt_gap: 1e-9,
        }
    }
}

impl SolverLimits {
    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = seconds;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MilpStatus {
    Optimal,
    /// Incumbent found, but a resource limit stopped the search.
    Feasible,
    Infeasible,
    Unbounded,
    /// Resource limit hit before any feasible point was found.
    TimeLimit,
}

impl MilpStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, MilpStatus::Optimal | MilpStatus::Feasible)
    }
}

impl fmt::Display for MilpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MilpStatus::Optimal => "optimal",
            MilpStatus::Feasible => "feasible",
            MilpStatus::Infeasible => "infeasible",
            MilpStatus::Unbounded => "unbounded",
            MilpStatus::TimeLimit => "time_limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpResult {
    pub status: MilpStatus,
    /// Variable values indexed by [`VarId`]; empty without a solution.
    pub values: Vec<f64>,
    pub objective_total: f64,
    pub objective_terms: BTreeMap<String, f64>,
    /// Lower bound on the optimum at termination.
    pub best_bound: f64,
    pub nodes_explored: usize,
    pub simplex_iterations: usize,
    pub wall_time: f64,
}

impl MilpResult {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    /// Relative gap between incumbent and bound.
    pub fn gap(&self) -> f64 {
        if !self.status.has_solution() {
            return f64::INFINITY;
        }
        (self.objective_total - self.best_bound).max(0.0) / self.objective_total.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}
