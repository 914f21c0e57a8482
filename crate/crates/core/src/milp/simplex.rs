//! Bounded-variable revised simplex.
//!
//! Every row `i` of the model gets a logical variable `r_i = Σ a_ij x_j`
//! whose bounds encode the row sense, so the constraints read `A x − r = 0`
//! and every variable, structural or logical, only has bounds. Nonbasic
//! variables sit at a finite bound (or at zero when free).
//!
//! The basis matrix is factorized through its kernel, the tight rows against
//! the basic structural columns: row and column singletons are peeled off
//! into triangular factors and the remaining bump gets a dense LU with
//! partial pivoting. Basis changes are applied as product-form eta updates
//! until the next refactorization.
//!
//! Two entry points: a two-phase primal simplex (phase 1 minimizes the sum
//! of infeasibilities) used from scratch, and a dual simplex used to
//! re-optimize after bounds are tightened on a previously optimal basis.
//! Both use Dantzig pricing, a Harris two-pass ratio test, and Bland's rule
//! after a long run of degenerate pivots.

use std::rc::Rc;
use std::time::Instant;

use std::cell::RefCell;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut, Par};

use crate::error::{Error, Result};

use super::{ConstraintSense, MilpModel};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
const SINGULAR_TOL: f64 = 1e-11;
const DEGENERATE_STEP: f64 = 1e-12;
/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_AFTER: usize = 1000;
const REFACTOR_EVERY: usize = 64;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    TimeLimit,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Params {
    pub feas_tol: f64,
    pub deadline: Option<Instant>,
}

/// Structural columns of the constraint matrix in compressed form.
#[derive(Debug)]
struct Columns {
    start: Vec<usize>,
    row: Vec<usize>,
    val: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.start[j]..self.start[j + 1];
        self.row[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }
}

/// Sparse LU of the basis kernel, plus the eta file of later updates.
#[derive(Debug, Clone)]
struct Factor {
    /// Row of each logical position, or `NONE` for structural positions.
    row_pos: Vec<usize>,
    /// Model row of each kernel row.
    krows: Vec<usize>,
    /// Basis position of each kernel column.
    kpos: Vec<usize>,
    /// Entries of each kernel column in rows outside the kernel.
    off_start: Vec<usize>,
    off_row: Vec<usize>,
    off_val: Vec<f64>,
    /// Kernel matrix by rows and by columns (kernel indices).
    kr_start: Vec<usize>,
    kr_idx: Vec<usize>,
    kr_val: Vec<f64>,
    kc_start: Vec<usize>,
    kc_idx: Vec<usize>,
    kc_val: Vec<f64>,
    /// Singleton pivots `(kernel row, kernel column, value)`.
    forward: Vec<(usize, usize, f64)>,
    backward: Vec<(usize, usize, f64)>,
    bump_rows: Vec<usize>,
    bump_cols: Vec<usize>,
    in_bump_row: Vec<bool>,
    in_bump_col: Vec<bool>,
    /// Sparse LU of the bump.
    lu: Option<Rc<BumpLu>>,
    etas: Vec<Eta>,
    /// Kernel-sized scratch: right-hand side, solution, bump vector.
    work: RefCell<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    others: Vec<(usize, f64)>,
}

impl Factor {
    fn new(m: usize, n: usize, basis: &[usize], a: &Columns) -> Result<Self> {
        let mut row_pos = vec![NONE; m];
        let mut kpos = Vec::new();
        let mut kvar = Vec::new();
        for (p, &j) in basis.iter().enumerate() {
            if j >= n {
                row_pos[j - n] = p;
            } else {
                kpos.push(p);
                kvar.push(j);
            }
        }
        let krows: Vec<usize> = (0..m).filter(|&i| row_pos[i] == NONE).collect();
        let k = krows.len();
        if k != kpos.len() {
            return Err(Error::Numerical("basis has a repeated row".into()));
        }
        let mut krow_of = vec![NONE; m];
        for (r, &i) in krows.iter().enumerate() {
            krow_of[i] = r;
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut off_start = vec![0];
        let mut off_row = Vec::new();
        let mut off_val = Vec::new();
        for (c, &j) in kvar.iter().enumerate() {
            for (i, v) in a.col(j) {
                let r = krow_of[i];
                if r != NONE {
                    cols[c].push((r, v));
                    rows[r].push((c, v));
                } else {
                    off_row.push(i);
                    off_val.push(v);
                }
            }
            off_start.push(off_row.len());
        }

        // Peel off row singletons (solved first) and column singletons
        // (solved last).
        let mut row_cnt: Vec<usize> = rows.iter().map(Vec::len).collect();
        let mut col_cnt: Vec<usize> = cols.iter().map(Vec::len).collect();
        let mut row_alive = vec![true; k];
        let mut col_alive = vec![true; k];
        let mut rstack: Vec<usize> = (0..k).rev().filter(|&r| row_cnt[r] == 1).collect();
        let mut cstack: Vec<usize> = (0..k).rev().filter(|&c| col_cnt[c] == 1).collect();
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        loop {
            if let Some(r) = rstack.pop() {
                if !row_alive[r] || row_cnt[r] != 1 {
                    continue;
                }
                let Some(&(c, v)) = rows[r].iter().find(|(c, _)| col_alive[*c]) else {
                    continue;
                };
                if v.abs() < SINGULAR_TOL {
                    continue;
                }
                forward.push((r, c, v));
                row_alive[r] = false;
                col_alive[c] = false;
                for &(r2, _) in &cols[c] {
                    if row_alive[r2] {
                        row_cnt[r2] -= 1;
                        if row_cnt[r2] == 1 {
                            rstack.push(r2);
                        }
                    }
                }
                continue;
            }
            if let Some(c) = cstack.pop() {
                if !col_alive[c] || col_cnt[c] != 1 {
                    continue;
                }
                let Some(&(r, v)) = cols[c].iter().find(|(r, _)| row_alive[*r]) else {
                    continue;
                };
                if v.abs() < SINGULAR_TOL {
                    continue;
                }
                backward.push((r, c, v));
                row_alive[r] = false;
                col_alive[c] = false;
                for &(c2, _) in &rows[r] {
                    if col_alive[c2] {
                        col_cnt[c2] -= 1;
                        if col_cnt[c2] == 1 {
                            cstack.push(c2);
                        }
                    }
                }
                continue;
            }
            break;
        }

        let bump_rows: Vec<usize> = (0..k).filter(|&r| row_alive[r]).collect();
        let bump_cols: Vec<usize> = (0..k).filter(|&c| col_alive[c]).collect();
        if bump_rows.len() != bump_cols.len() {
            return Err(Error::Numerical("singular basis".into()));
        }
        let b = bump_rows.len();
        let lu = if b > 0 {
            let mut bcol_of = vec![NONE; k];
            for (ci, &c) in bump_cols.iter().enumerate() {
                bcol_of[c] = ci;
            }
            let mut trip = Vec::new();
            for (ri, &r) in bump_rows.iter().enumerate() {
                for &(c, v) in &rows[r] {
                    if bcol_of[c] != NONE {
                        trip.push(Triplet::new(ri, bcol_of[c], v));
                    }
                }
            }
            let lu = BumpLu::new(b, &trip)?;
            // The factorization does not report rank loss; check a solve.
            let mut probe: Vec<f64> = (0..b).map(|i| 1.0 + (i % 7) as f64).collect();
            let mut resid = probe.clone();
            lu.solve(&mut probe, false);
            for t in &trip {
                resid[t.row] -= t.val * probe[t.col];
            }
            let scale = probe.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
            if resid.iter().any(|r| !(r.abs() <= 1e-9 * scale)) {
                return Err(Error::Numerical("singular basis".into()));
            }
            Some(Rc::new(lu))
        } else {
            None
        };

        let flatten = |lists: Vec<Vec<(usize, f64)>>| {
            let mut start = Vec::with_capacity(lists.len() + 1);
            let mut idx = Vec::new();
            let mut val = Vec::new();
            start.push(0);
            for l in lists {
                for (i, v) in l {
                    idx.push(i);
                    val.push(v);
                }
                start.push(idx.len());
            }
            (start, idx, val)
        };
        let (kr_start, kr_idx, kr_val) = flatten(rows);
        let (kc_start, kc_idx, kc_val) = flatten(cols);
        Ok(Self {
            row_pos,
            krows,
            kpos,
            off_start,
            off_row,
            off_val,
            kr_start,
            kr_idx,
            kr_val,
            kc_start,
            kc_idx,
            kc_val,
            forward,
            backward,
            in_bump_row: (0..k).map(|r| row_alive[r]).collect(),
            in_bump_col: (0..k).map(|c| col_alive[c]).collect(),
            bump_rows,
            bump_cols,
            lu,
            etas: Vec::new(),
            work: RefCell::new((vec![0.0; k], vec![0.0; k], vec![0.0; b])),
        })
    }

    fn krow(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.kr_start[r]..self.kr_start[r + 1];
        self.kr_idx[s.clone()]
            .iter()
            .copied()
            .zip(self.kr_val[s].iter().copied())
    }

    fn kcol(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.kc_start[c]..self.kc_start[c + 1];
        self.kc_idx[s.clone()]
            .iter()
            .copied()
            .zip(self.kc_val[s].iter().copied())
    }

    /// Solves `M y = rhs` for the kernel (`rhs` by kernel row, `y` by kernel
    /// column).
    fn kernel_solve(&self, rhs: &[f64], y: &mut [f64], t: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for &(r, c, v) in &self.forward {
            let s: f64 = self.krow(r).filter(|&(c2, _)| c2 != c).map(|(c2, a)| a * y[c2]).sum();
            y[c] = (rhs[r] - s) / v;
        }
        let b = self.bump_rows.len();
        if b > 0 {
            for (ti, &r) in t.iter_mut().zip(&self.bump_rows) {
                *ti = rhs[r]
                    - self
                        .krow(r)
                        .filter(|&(c2, _)| !self.in_bump_col[c2])
                        .map(|(c2, a)| a * y[c2])
                        .sum::<f64>();
            }
            self.lu.as_ref().expect("bump factor").solve(t, false);
            for (ci, &c) in self.bump_cols.iter().enumerate() {
                y[c] = t[ci];
            }
        }
        for &(r, c, v) in self.backward.iter().rev() {
            let s: f64 = self.krow(r).filter(|&(c2, _)| c2 != c).map(|(c2, a)| a * y[c2]).sum();
            y[c] = (rhs[r] - s) / v;
        }
    }

    /// Solves `Mᵀ w = rhs` for the kernel (`rhs` by kernel column, `w` by
    /// kernel row).
    fn kernel_solve_t(&self, rhs: &[f64], w: &mut [f64], z: &mut [f64]) {
        w.iter_mut().for_each(|v| *v = 0.0);
        for &(r, c, v) in &self.backward {
            let s: f64 = self.kcol(c).filter(|&(r2, _)| r2 != r).map(|(r2, a)| a * w[r2]).sum();
            w[r] = (rhs[c] - s) / v;
        }
        let b = self.bump_rows.len();
        if b > 0 {
            for (zi, &c) in z.iter_mut().zip(&self.bump_cols) {
                *zi = rhs[c]
                    - self
                        .kcol(c)
                        .filter(|&(r2, _)| !self.in_bump_row[r2])
                        .map(|(r2, a)| a * w[r2])
                        .sum::<f64>();
            }
            self.lu.as_ref().expect("bump factor").solve(z, true);
            for (ri, &r) in self.bump_rows.iter().enumerate() {
                w[r] = z[ri];
            }
        }
        for &(r, c, v) in self.forward.iter().rev() {
            let s: f64 = self.kcol(c).filter(|&(r2, _)| r2 != r).map(|(r2, a)| a * w[r2]).sum();
            w[r] = (rhs[c] - s) / v;
        }
    }
}

/// Sparse LU of the bump with its solve workspace.
struct BumpLu {
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    scratch: RefCell<MemBuffer>,
}

impl std::fmt::Debug for BumpLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BumpLu")
    }
}

impl BumpLu {
    fn new(b: usize, trip: &[Triplet<usize, usize, f64>]) -> Result<Self> {
        let singular = |_| Error::Numerical("singular basis".into());
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(b, b, trip)
            .map_err(|_| Error::Numerical("bad kernel".into()))?;
        let symbolic = factorize_symbolic_lu(mat.symbolic(), Default::default())
            .map_err(|_| Error::Numerical("symbolic LU failed".into()))?;
        let mut numeric = NumericLu::new();
        let req = symbolic
            .factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default())
            .or(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let mut scratch = MemBuffer::new(req);
        symbolic
            .factorize_numeric_lu(
                &mut numeric,
                mat.as_ref(),
                Par::Seq,
                MemStack::new(&mut scratch),
                Default::default(),
            )
            .map_err(singular)?;
        Ok(Self {
            symbolic,
            numeric,
            scratch: RefCell::new(scratch),
        })
    }

    fn solve(&self, rhs: &mut [f64], transpose: bool) {
        let b = rhs.len();
        let lu = LuRef::new_unchecked(&self.symbolic, &self.numeric);
        let mut scratch = self.scratch.borrow_mut();
        let stack = MemStack::new(&mut scratch);
        let x = MatMut::from_column_major_slice_mut(rhs, b, 1);
        if transpose {
            lu.solve_transpose_in_place_with_conj(Conj::No, x, Par::Seq, stack);
        } else {
            lu.solve_in_place_with_conj(Conj::No, x, Par::Seq, stack);
        }
    }
}

/// Basis of a solved relaxation, enough to warm-start a related one.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    basis: Vec<u32>,
    at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    a: Rc<Columns>,
    /// The same matrix by rows.
    at: Rc<Columns>,
    /// Values of all `n + m` variables (structural first).
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    cost: Vec<f64>,
    /// Basic variable of each basis position.
    basis: Vec<usize>,
    /// Basis position of each variable, `NONE` when nonbasic.
    pos: Vec<usize>,
    /// Reduced costs (zero for basic variables).
    d: Vec<f64>,
    factor: Factor,
    pub iterations: usize,
    max_iterations: usize,
    /// Nonbasic values changed since basic values were last computed.
    stale: bool,
}

impl Tableau {
    /// Slack basis: every logical is basic, every structural sits at a bound.
    pub fn from_model(model: &MilpModel) -> Self {
        let n = model.variables.len();
        let m = model.constraints.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &model.variables {
            lower.push(v.lower);
            upper.push(v.upper);
        }
        for (i, c) in model.constraints.iter().enumerate() {
            for &(v, coef) in &c.coefficients {
                match cols[v.0].last_mut() {
                    Some((r, a)) if *r == i => *a += coef,
                    _ => cols[v.0].push((i, coef)),
                }
            }
            let (lo, hi) = match c.sense {
                ConstraintSense::Le => (f64::NEG_INFINITY, c.rhs),
                ConstraintSense::Ge => (c.rhs, f64::INFINITY),
                ConstraintSense::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut a = Columns {
            start: vec![0],
            row: Vec::new(),
            val: Vec::new(),
        };
        for col in cols {
            for (i, v) in col {
                if v != 0.0 {
                    a.row.push(i);
                    a.val.push(v);
                }
            }
            a.start.push(a.row.len());
        }
        let (c, _) = model.cost_vector();
        let mut cost = c;
        cost.resize(n + m, 0.0);

        let x = (0..n + m).map(|j| resting_value(lower[j], upper[j], false)).collect();
        let basis: Vec<usize> = (n..n + m).collect();
        let mut pos = vec![NONE; n + m];
        for (p, &j) in basis.iter().enumerate() {
            pos[j] = p;
        }
        let factor = Factor::new(m, n, &basis, &a).expect("slack basis is nonsingular");
        let mut tab = Self {
            m,
            n,
            at: Rc::new(transpose(&a, m)),
            a: Rc::new(a),
            x,
            lower,
            upper,
            cost,
            basis,
            pos,
            d: vec![0.0; n + m],
            factor,
            iterations: 0,
            max_iterations: 50_000 + 50 * (n + m),
            stale: true,
        };
        tab.recompute_x();
        tab.recompute_d();
        tab
    }

    pub fn structural_values(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            basis: self.basis.iter().map(|&j| j as u32).collect(),
            at_upper: (0..self.n + self.m)
                .map(|j| self.pos[j] == NONE && self.x[j] == self.upper[j] && self.x[j] != self.lower[j])
                .collect(),
        }
    }

    /// Installs the basis of `snap`, keeping the current bounds.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        self.basis = snap.basis.iter().map(|&j| j as usize).collect();
        self.pos.iter_mut().for_each(|p| *p = NONE);
        for (p, &j) in self.basis.iter().enumerate() {
            self.pos[j] = p;
        }
        for j in 0..self.n + self.m {
            if self.pos[j] == NONE {
                self.x[j] = resting_value(self.lower[j], self.upper[j], snap.at_upper[j]);
            }
        }
        self.refactor()
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for (i, v) in self.a.col(j) {
                out[i] = v;
            }
        } else {
            out[j - self.n] = -1.0;
        }
    }

    /// `wᵀ a_j` for the column of variable `j` in `[A, −I]`.
    fn col_dot(&self, w: &[f64], j: usize) -> f64 {
        if j < self.n {
            self.a.col(j).map(|(i, v)| v * w[i]).sum()
        } else {
            -w[j - self.n]
        }
    }

    /// `B⁻¹ rhs`; `rhs` is indexed by row, the result by basis position.
    fn ftran(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.ftran_into(rhs, &mut out);
        out
    }

    /// `ftran` into `out`, which is fully overwritten.
    fn ftran_into(&self, rhs: &[f64], out: &mut [f64]) {
        let f = &self.factor;
        let k = f.krows.len();
        if k > 0 {
            let mut work = f.work.borrow_mut();
            let (kr, y, t) = &mut *work;
            for (v, &i) in kr.iter_mut().zip(&f.krows) {
                *v = rhs[i];
            }
            f.kernel_solve(kr, y, t);
            for c in 0..k {
                out[f.kpos[c]] = y[c];
            }
            for i in 0..self.m {
                if f.row_pos[i] != NONE {
                    out[f.row_pos[i]] = -rhs[i];
                }
            }
            for c in 0..k {
                if y[c] != 0.0 {
                    for t in f.off_start[c]..f.off_start[c + 1] {
                        out[f.row_pos[f.off_row[t]]] += f.off_val[t] * y[c];
                    }
                }
            }
        } else {
            for i in 0..self.m {
                out[f.row_pos[i]] = -rhs[i];
            }
        }
        for eta in &f.etas {
            let yr = out[eta.pos] / eta.pivot;
            out[eta.pos] = yr;
            if yr != 0.0 {
                for &(i, a) in &eta.others {
                    out[i] -= a * yr;
                }
            }
        }
    }

    /// `B⁻ᵀ c`; `c` is indexed by basis position, the result by row.
    fn btran(&self, c: &[f64]) -> Vec<f64> {
        let mut c = c.to_vec();
        let mut w = vec![0.0; self.m];
        self.btran_into(&mut c, &mut w);
        w
    }

    /// `btran` into `w`, which is fully overwritten; `c` is clobbered.
    fn btran_into(&self, c: &mut [f64], w: &mut [f64]) {
        let f = &self.factor;
        for eta in f.etas.iter().rev() {
            let s: f64 = eta.others.iter().map(|&(i, a)| a * c[i]).sum();
            c[eta.pos] = (c[eta.pos] - s) / eta.pivot;
        }
        for i in 0..self.m {
            if f.row_pos[i] != NONE {
                w[i] = -c[f.row_pos[i]];
            }
        }
        let k = f.krows.len();
        if k > 0 {
            let mut work = f.work.borrow_mut();
            let (rhs, wk, z) = &mut *work;
            for (col, v) in rhs.iter_mut().enumerate() {
                let r = f.off_start[col]..f.off_start[col + 1];
                let s: f64 = f.off_row[r.clone()]
                    .iter()
                    .zip(&f.off_val[r])
                    .map(|(&i, &a)| a * w[i])
                    .sum();
                *v = c[f.kpos[col]] - s;
            }
            f.kernel_solve_t(rhs, wk, z);
            for (r, &i) in f.krows.iter().enumerate() {
                w[i] = wk[r];
            }
        }
    }

    fn refactor(&mut self) -> Result<()> {
        self.factor = Factor::new(self.m, self.n, &self.basis, &self.a)?;
        self.recompute_x();
        self.recompute_d();
        Ok(())
    }

    /// Basic values from the nonbasic ones: `x_B = −B⁻¹ N x_N`.
    fn recompute_x(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.pos[j] != NONE || self.x[j] == 0.0 {
                continue;
            }
            let v = self.x[j];
            if j < self.n {
                for (i, a) in self.a.col(j) {
                    rhs[i] -= a * v;
                }
            } else {
                rhs[j - self.n] += v;
            }
        }
        let y = self.ftran(&rhs);
        for p in 0..self.m {
            self.x[self.basis[p]] = y[p];
        }
        self.stale = false;
    }

    fn recompute_d(&mut self) {
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        let w = self.btran(&cb);
        for j in 0..self.n + self.m {
            self.d[j] = if self.pos[j] == NONE {
                self.cost[j] - self.col_dot(&w, j)
            } else {
                0.0
            };
        }
    }

    /// Replaces the basic variable at position `p` by `q`, whose transformed
    /// column is `alpha`.
    fn exchange(&mut self, p: usize, q: usize, alpha: &[f64]) {
        let leaving = self.basis[p];
        self.basis[p] = q;
        self.pos[q] = p;
        self.pos[leaving] = NONE;
        let others = alpha
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != p && a.abs() > DROP_TOL)
            .map(|(i, &a)| (i, a))
            .collect();
        self.factor.etas.push(Eta {
            pos: p,
            pivot: alpha[p],
            others,
        });
        self.iterations += 1;
    }

    fn check_budget(&mut self, params: &Params) -> Result<Option<Outcome>> {
        if self.iterations >= self.max_iterations {
            return Err(Error::Numerical(format!(
                "simplex iteration limit ({}) reached",
                self.max_iterations
            )));
        }
        if self.iterations.is_multiple_of(32) {
            if let Some(deadline) = params.deadline {
                if Instant::now() >= deadline {
                    return Ok(Some(Outcome::TimeLimit));
                }
            }
        }
        if self.factor.etas.len() >= REFACTOR_EVERY {
            self.refactor()?;
        } else if self.stale {
            self.recompute_x();
        }
        Ok(None)
    }

    fn infeasibility(&self, var: usize, tol: f64) -> f64 {
        let v = self.x[var];
        if v < self.lower[var] - tol {
            self.lower[var] - v
        } else if v > self.upper[var] + tol {
            v - self.upper[var]
        } else {
            0.0
        }
    }

    /// Two-phase primal simplex from the current basis.
    pub fn solve_primal(&mut self, params: &Params) -> Result<Outcome> {
        if self.stale {
            self.recompute_x();
        }
        match self.primal(true, params)? {
            Outcome::Optimal => {}
            other => return Ok(other),
        }
        self.recompute_d();
        self.primal(false, params)
    }

    fn primal(&mut self, phase_one: bool, params: &Params) -> Result<Outcome> {
        let nm = self.n + self.m;
        let tol = params.feas_tol;
        let mut degenerate_run = 0usize;
        let mut col = vec![0.0; self.m];
        let mut alpha = vec![0.0; self.m];
        loop {
            if let Some(out) = self.check_budget(params)? {
                return Ok(out);
            }
            let phase_d;
            let d: &[f64] = if phase_one {
                let mut cb = vec![0.0; self.m];
                let mut any = false;
                for p in 0..self.m {
                    let b = self.basis[p];
                    if self.x[b] < self.lower[b] - tol {
                        cb[p] = -1.0;
                        any = true;
                    } else if self.x[b] > self.upper[b] + tol {
                        cb[p] = 1.0;
                        any = true;
                    }
                }
                if !any {
                    return Ok(Outcome::Optimal);
                }
                let w = self.btran(&cb);
                phase_d = (0..nm)
                    .map(|j| if self.pos[j] == NONE { -self.col_dot(&w, j) } else { 0.0 })
                    .collect::<Vec<f64>>();
                &phase_d
            } else {
                &self.d
            };
            let bland = degenerate_run >= BLAND_AFTER;

            // Pricing.
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..nm {
                if self.pos[j] != NONE {
                    continue;
                }
                let (lo, hi) = (self.lower[j], self.upper[j]);
                if lo == hi {
                    continue;
                }
                let dj = d[j];
                let dir = if dj < -OPT_TOL && self.x[j] < hi {
                    1.0
                } else if dj > OPT_TOL && self.x[j] > lo {
                    -1.0
                } else {
                    continue;
                };
                let better = match entering {
                    None => true,
                    Some((_, _, score)) => !bland && dj.abs() > score,
                };
                if better {
                    entering = Some((j, dir, dj.abs()));
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(if phase_one {
                    Outcome::Infeasible
                } else {
                    Outcome::Optimal
                });
            };

            self.column(q, &mut col);
            self.ftran_into(&col, &mut alpha);

            // Harris two-pass ratio test. Basic variables move at rate
            // −α·dir per unit step of the entering one. `None` as leaving
            // position means a bound flip.
            let range = self.upper[q] - self.lower[q];
            let mut rows: Vec<(usize, f64, f64, f64)> = Vec::new();
            let mut relaxed_max = range;
            for p in 0..self.m {
                let rate = -alpha[p] * dir;
                if rate.abs() < PIVOT_TOL {
                    continue;
                }
                let b = self.basis[p];
                let (xb, lb, ub) = (self.x[b], self.lower[b], self.upper[b]);
                let (gap, bound) = if phase_one && xb < lb - tol {
                    if rate > 0.0 {
                        (lb - xb, lb)
                    } else {
                        continue;
                    }
                } else if phase_one && xb > ub + tol {
                    if rate < 0.0 {
                        (xb - ub, ub)
                    } else {
                        continue;
                    }
                } else if rate > 0.0 {
                    if ub.is_finite() {
                        ((ub - xb).max(0.0), ub)
                    } else {
                        continue;
                    }
                } else if lb.is_finite() {
                    ((xb - lb).max(0.0), lb)
                } else {
                    continue;
                };
                relaxed_max = relaxed_max.min((gap + tol) / rate.abs());
                rows.push((p, gap / rate.abs(), rate.abs(), bound));
            }
            let mut theta = range;
            let mut leaving: Option<(usize, f64)> = None;
            if range > relaxed_max {
                let mut best = 0.0;
                for &(p, limit, size, bound) in &rows {
                    if limit > relaxed_max {
                        continue;
                    }
                    let take = match leaving {
                        None => true,
                        Some((bp, _)) if bland => self.basis[p] < self.basis[bp],
                        Some(_) => size > best,
                    };
                    if take {
                        best = size;
                        theta = limit;
                        leaving = Some((p, bound));
                    }
                }
            }
            if !theta.is_finite() {
                if phase_one {
                    return Err(Error::Numerical("unbounded ray in phase 1".into()));
                }
                return Ok(Outcome::Unbounded);
            }

            let step = theta * dir;
            self.x[q] += step;
            for p in 0..self.m {
                if alpha[p] != 0.0 {
                    self.x[self.basis[p]] -= alpha[p] * step;
                }
            }
            match leaving {
                None => {
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                    self.iterations += 1;
                }
                Some((p, bound)) => {
                    let b = self.basis[p];
                    self.exchange(p, q, &alpha);
                    self.x[b] = bound;
                    if !phase_one {
                        self.recompute_d();
                    }
                }
            }
            if theta <= DEGENERATE_STEP {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }

    /// Changes the bounds of a variable. A nonbasic variable is moved inside
    /// the new box; basic values are recomputed lazily.
    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
        if self.pos[var] == NONE {
            let old = self.x[var];
            let new = if lo == hi || old <= lo {
                lo
            } else if old >= hi {
                hi
            } else {
                old
            };
            if new != old {
                self.x[var] = new;
                self.stale = true;
            }
        }
    }

    /// Dual simplex from a dual-feasible basis, followed by a primal clean-up
    /// pass for any dual infeasibility left by round-off.
    pub fn reoptimize(&mut self, params: &Params) -> Result<Outcome> {
        if self.stale {
            self.recompute_x();
        }
        match self.dual(params)? {
            Outcome::Optimal => {}
            other => return Ok(other),
        }
        if !self.primal_feasible(params.feas_tol) {
            self.refactor()?;
            if !self.primal_feasible(params.feas_tol) {
                return self.solve_primal(params);
            }
        }
        self.primal(false, params)
    }

    fn primal_feasible(&self, tol: f64) -> bool {
        self.basis.iter().all(|&b| self.infeasibility(b, tol) == 0.0)
    }

    fn dual(&mut self, params: &Params) -> Result<Outcome> {
        let nm = self.n + self.m;
        let tol = params.feas_tol;
        let mut degenerate_run = 0usize;
        let mut unit = vec![0.0; self.m];
        let mut rho = vec![0.0; self.m];
        let mut col = vec![0.0; self.m];
        let mut alpha = vec![0.0; self.m];
        let mut row = vec![0.0; nm];
        let mut seen = vec![false; nm];
        let mut touched: Vec<usize> = Vec::new();
        loop {
            if let Some(out) = self.check_budget(params)? {
                return Ok(out);
            }
            let bland = degenerate_run >= BLAND_AFTER;

            let mut leave: Option<(usize, f64, f64)> = None;
            for p in 0..self.m {
                let b = self.basis[p];
                let viol = self.infeasibility(b, tol);
                if viol == 0.0 {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((bp, _, bv)) => {
                        if bland {
                            b < self.basis[bp]
                        } else {
                            viol > bv
                        }
                    }
                };
                if better {
                    let target = if self.x[b] < self.lower[b] {
                        self.lower[b]
                    } else {
                        self.upper[b]
                    };
                    leave = Some((p, target, viol));
                }
            }
            let Some((r, target, _)) = leave else {
                return Ok(Outcome::Optimal);
            };
            let increase = target > self.x[self.basis[r]];

            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[r] = 1.0;
            self.btran_into(&mut unit, &mut rho);
            for &j in &touched {
                row[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
            for (i, &ri) in rho.iter().enumerate() {
                if ri.abs() <= DROP_TOL {
                    continue;
                }
                for (j, a) in self.at.col(i) {
                    if self.pos[j] == NONE {
                        if !seen[j] {
                            seen[j] = true;
                            touched.push(j);
                        }
                        row[j] += ri * a;
                    }
                }
                if self.pos[self.n + i] == NONE {
                    seen[self.n + i] = true;
                    touched.push(self.n + i);
                    row[self.n + i] = -ri;
                }
            }

            // Moving nonbasic j by δ changes the leaving variable by
            // −row[j]·δ. Harris two-pass ratio test on the reduced costs.
            let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
            let mut relaxed_max = f64::INFINITY;
            for &j in &touched {
                let a = row[j];
                if a.abs() < PIVOT_TOL || self.lower[j] == self.upper[j] {
                    continue;
                }
                let dir = if (-a > 0.0) == increase { 1.0 } else { -1.0 };
                if (dir > 0.0 && self.x[j] >= self.upper[j]) || (dir < 0.0 && self.x[j] <= self.lower[j]) {
                    continue;
                }
                let slack = (self.d[j] * dir).max(0.0);
                relaxed_max = relaxed_max.min((slack + OPT_TOL) / a.abs());
                candidates.push((j, slack / a.abs(), a.abs()));
            }
            let mut enter: Option<(usize, f64)> = None;
            let mut best_pivot = 0.0;
            for &(j, ratio, size) in &candidates {
                if ratio > relaxed_max {
                    continue;
                }
                let take = if bland {
                    enter.is_none_or(|(bj, _)| j < bj)
                } else {
                    size > best_pivot
                };
                if take {
                    enter = Some((j, ratio));
                    best_pivot = size;
                }
            }
            let Some((q, ratio)) = enter else {
                return Ok(Outcome::Infeasible);
            };

            self.column(q, &mut col);
            self.ftran_into(&col, &mut alpha);
            let arq = row[q];
            if (alpha[r] - arq).abs() > 1e-7 * (1.0 + arq.abs()) {
                if self.factor.etas.is_empty() {
                    return Err(Error::Numerical("inconsistent pivot element".into()));
                }
                self.refactor()?;
                continue;
            }

            let leaving = self.basis[r];
            let delta = (target - self.x[leaving]) / -alpha[r];
            self.x[q] += delta;
            for p in 0..self.m {
                if alpha[p] != 0.0 {
                    self.x[self.basis[p]] -= alpha[p] * delta;
                }
            }
            let theta_d = self.d[q] / arq;
            for &j in &touched {
                self.d[j] -= theta_d * row[j];
            }
            self.d[q] = 0.0;
            self.d[leaving] = -theta_d;
            self.exchange(r, q, &alpha);
            self.x[leaving] = target;
            if ratio <= DEGENERATE_STEP {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }
}

fn transpose(a: &Columns, m: usize) -> Columns {
    let mut count = vec![0usize; m + 1];
    for &i in &a.row {
        count[i + 1] += 1;
    }
    for i in 0..m {
        count[i + 1] += count[i];
    }
    let mut next = count.clone();
    let mut row = vec![0; a.row.len()];
    let mut val = vec![0.0; a.row.len()];
    for j in 0..a.start.len() - 1 {
        for (i, v) in a.col(j) {
            row[next[i]] = j;
            val[next[i]] = v;
            next[i] += 1;
        }
    }
    Columns { start: count, row, val }
}

fn resting_value(lo: f64, hi: f64, prefer_upper: bool) -> f64 {
    if prefer_upper && hi.is_finite() {
        hi
    } else if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}
