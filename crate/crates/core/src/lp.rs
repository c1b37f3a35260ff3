//! Bounded-variable revised primal simplex for equality-form LPs:
//!
//! ```text
//! min c'x  s.t.  A x = b,  lower <= x <= upper
//! ```
//!
//! Every row carries an implicit artificial column fixed at zero. A cold start
//! begins from the all-artificial basis and a composite phase 1 minimizes the
//! sum of bound violations of the basic variables; warm starts enter the same
//! phase 1 from whatever basis they are given. Rows that stay covered by their
//! artificial after a refactorization are linearly dependent and effectively
//! dropped: the artificial is fixed at zero and never constrains the solution.
//!
//! The basis inverse is held densely (column-major) and updated in product
//! form; it is rebuilt from scratch every [`REFACTOR_INTERVAL`] pivots, on
//! residual drift, and before any status is reported.

use std::io::Write;

use crate::error::{Error, Result};

pub const TOL_FEAS: f64 = 1e-9;
pub const TOL_OPT: f64 = 1e-9;
pub const REFACTOR_INTERVAL: usize = 50;
const DRIFT_TOL: f64 = 1e-7;
/// Residual below which an optimal basis is reported without refactoring.
const VERIFY_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-9;
const HARRIS_TOL: f64 = 1e-10;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_THRESHOLD: usize = 40;

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-column `(row, value)` lists. Zero values are dropped.
    pub fn from_columns(nrows: usize, columns: &[Vec<(usize, f64)>]) -> Self {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in columns {
            let mut col = col.clone();
            col.sort_by_key(|e| e.0);
            for (r, v) in col {
                assert!(r < nrows, "row index {r} out of range");
                if v == 0.0 {
                    continue;
                }
                if row_idx.len() > *col_ptr.last().unwrap() && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols: columns.len(),
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let columns: Vec<Vec<(usize, f64)>> = (0..ncols)
            .map(|j| (0..nrows).map(|i| (i, rows[i][j])).collect())
            .collect();
        Self::from_columns(nrows, &columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (r, v) in self.column(j) {
                    out[r] += v * xj;
                }
            }
        }
        out
    }

    /// `y' A_j` for every column.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.column(j).map(|(r, v)| v * y[r]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn new(
        objective: Vec<f64>,
        eq_matrix: SparseMatrix,
        eq_rhs: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let nv = objective.len();
        if eq_matrix.ncols() != nv || lower.len() != nv || upper.len() != nv {
            return Err(Error::Domain(format!(
                "LP has {nv} objective entries, {} matrix columns, {} lower and {} upper bounds",
                eq_matrix.ncols(),
                lower.len(),
                upper.len()
            )));
        }
        if eq_matrix.nrows() != eq_rhs.len() {
            return Err(Error::Domain(format!(
                "LP has {} matrix rows but {} right-hand sides",
                eq_matrix.nrows(),
                eq_rhs.len()
            )));
        }
        for j in 0..nv {
            if lower[j].is_nan() || upper[j].is_nan() || lower[j] > upper[j] {
                return Err(Error::Domain(format!(
                    "variable {j} has bounds [{}, {}]",
                    lower[j], upper[j]
                )));
            }
        }
        if objective.iter().chain(&eq_rhs).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite objective or rhs".into()));
        }
        Ok(Self {
            objective,
            eq_matrix,
            eq_rhs,
            lower,
            upper,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rhs.len()
    }

    /// Plain-text dump for cross-checking with external solvers.
    ///
    /// ```text
    /// # entrobound lp v1
    /// dims <vars> <rows>
    /// obj <c_0> <c_1> ...
    /// row <r> rhs <b_r> : <j>:<a_rj> ...
    /// bound <j> <lower> <upper>
    /// ```
    /// Infinite bounds print as `inf` / `-inf`; numbers use `{:e}` so they round-trip.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# entrobound lp v1")?;
        writeln!(w, "dims {} {}", self.num_vars(), self.num_rows())?;
        write!(w, "obj")?;
        for c in &self.objective {
            write!(w, " {c:e}")?;
        }
        writeln!(w)?;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_rows()];
        for j in 0..self.num_vars() {
            for (r, v) in self.eq_matrix.column(j) {
                rows[r].push((j, v));
            }
        }
        for (r, entries) in rows.iter().enumerate() {
            write!(w, "row {r} rhs {:e} :", self.eq_rhs[r])?;
            for (j, v) in entries {
                write!(w, " {j}:{v:e}")?;
            }
            writeln!(w)?;
        }
        for j in 0..self.num_vars() {
            writeln!(w, "bound {j} {:e} {:e}", self.lower[j], self.upper[j])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A simplex basis. Indices `>= num_vars` name the artificial column of row
/// `index - num_vars`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Basis {
    pub basic: Vec<usize>,
    /// Nonbasic structural variables resting at their upper bound.
    pub at_upper: Vec<usize>,
}

/// Basis inverse from a finished solve, reusable by a later solve that
/// starts from the same basis.
#[derive(Debug, Clone)]
pub struct Factorization {
    basic: Vec<usize>,
    binv: Vec<f64>,
    pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub obj: f64,
    pub basis: Basis,
    /// Row multipliers `y = c_B' B^-1`.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Lagrangian dual value `b'y + sum_j min_{l<=x<=u} d_j x_j`.
    pub dual_obj: f64,
    pub iterations: usize,
    /// Rows found linearly dependent on the others.
    pub redundant_rows: Vec<usize>,
    pub factorization: Factorization,
}

/// Solve `p`, optionally starting from `warm`.
pub fn solve_lp(p: &LpProblem, warm: Option<&Basis>) -> Result<LpSolution> {
    solve_lp_with(p, warm, None)
}

/// [`solve_lp`] that skips the initial factorization when `factor` belongs
/// to the warm basis.
pub fn solve_lp_with(
    p: &LpProblem,
    warm: Option<&Basis>,
    factor: Option<&Factorization>,
) -> Result<LpSolution> {
    if let Some(b) = warm {
        if b.basic.len() != p.num_rows() {
            return Err(Error::Domain(format!(
                "warm basis has {} entries, LP has {} rows",
                b.basic.len(),
                p.num_rows()
            )));
        }
        if b.basic
            .iter()
            .chain(&b.at_upper)
            .any(|&j| j >= p.num_vars() + p.num_rows())
        {
            return Err(Error::Domain("warm basis index out of range".into()));
        }
    }
    let factor = factor.filter(|f| {
        warm.is_some_and(|b| b.basic == f.basic) && f.binv.len() == p.num_rows() * p.num_rows()
    });
    let mut s = Simplex::new(p, warm, factor);
    s.run()
}

const NONBASIC: usize = usize::MAX;

struct Simplex<'a> {
    p: &'a LpProblem,
    nv: usize,
    m: usize,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    basic: Vec<usize>,
    pos: Vec<usize>,
    /// Dense `B^-1`, column-major.
    binv: Vec<f64>,
    pivots_since_refactor: usize,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
    bland: bool,
}

#[derive(Debug)]
enum Step {
    Flip,
    Pivot { row: usize, to_upper: bool },
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProblem, warm: Option<&Basis>, factor: Option<&Factorization>) -> Self {
        let nv = p.num_vars();
        let m = p.num_rows();
        let mut lo = p.lower.clone();
        let mut up = p.upper.clone();
        lo.extend(std::iter::repeat(0.0).take(m));
        up.extend(std::iter::repeat(0.0).take(m));

        let at_upper: Vec<bool> = {
            let mut flags = vec![false; nv];
            if let Some(b) = warm {
                for &j in &b.at_upper {
                    if j < nv {
                        flags[j] = true;
                    }
                }
            }
            flags
        };
        let mut x = vec![0.0; nv + m];
        for j in 0..nv {
            x[j] = resting_value(lo[j], up[j], at_upper[j]);
        }
        let basic: Vec<usize> = match warm {
            Some(b) => b.basic.clone(),
            None => (nv..nv + m).collect(),
        };
        let mut s = Self {
            p,
            nv,
            m,
            lo,
            up,
            x,
            basic,
            pos: vec![NONBASIC; nv + m],
            binv: Vec::new(),
            pivots_since_refactor: 0,
            iterations: 0,
            max_iterations: 1000 + 50 * (nv + m),
            degenerate_run: 0,
            bland: false,
        };
        match factor {
            Some(f) => {
                s.binv = f.binv.clone();
                s.pivots_since_refactor = f.pivots;
                for (r, &j) in s.basic.iter().enumerate() {
                    s.pos[j] = r;
                }
            }
            None => s.refactor(),
        }
        s.compute_basic_values();
        s
    }

    #[inline]
    fn binv_col(&self, r: usize) -> &[f64] {
        &self.binv[r * self.m..(r + 1) * self.m]
    }

    fn for_each_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.nv {
            for (r, v) in self.p.eq_matrix.column(j) {
                f(r, v);
            }
        } else {
            f(j - self.nv, 1.0);
        }
    }

    fn col_dot(&self, y: &[f64], j: usize) -> f64 {
        let mut acc = 0.0;
        self.for_each_entry(j, |r, v| acc += v * y[r]);
        acc
    }

    /// `B^-1 a_j`
    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut alpha = vec![0.0; self.m];
        self.ftran_into(j, &mut alpha);
        alpha
    }

    fn ftran_into(&self, j: usize, alpha: &mut [f64]) {
        alpha.fill(0.0);
        self.for_each_entry(j, |r, v| {
            for (a, b) in alpha.iter_mut().zip(self.binv_col(r)) {
                *a += v * b;
            }
        });
    }

    /// `c_B' B^-1`
    fn btran(&self, cb: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|k| self.binv_col(k).iter().zip(cb).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Replace the basic variable at `row` by a column with ftran `alpha`.
    fn eta_update(&mut self, row: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[row];
        for k in 0..m {
            let col = &mut self.binv[k * m..(k + 1) * m];
            let t = col[row] / piv;
            if t != 0.0 {
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= alpha[i] * t;
                }
            }
            col[row] = t;
        }
    }

    /// Rebuild `B^-1` in product form with partial pivoting. Basic columns that
    /// turn out dependent are made nonbasic and their rows are covered by the
    /// row artificials.
    fn refactor(&mut self) {
        let m = self.m;
        self.binv = vec![0.0; m * m];
        for r in 0..m {
            self.binv[r * m + r] = 1.0;
        }
        let mut used = vec![false; m];
        let mut new_basic = vec![NONBASIC; m];
        let mut order = self.basic.clone();
        // artificials first so each lands on its own row
        order.sort_by_key(|&j| (j < self.nv, j));
        order.dedup();
        let mut alpha = vec![0.0; m];
        for &j in &order {
            self.ftran_into(j, &mut alpha);
            let scale = alpha.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
            let mut best = None;
            let mut best_abs = 1e-11 * scale;
            for r in 0..m {
                if !used[r] && alpha[r].abs() > best_abs {
                    best_abs = alpha[r].abs();
                    best = Some(r);
                }
            }
            match best {
                Some(r) => {
                    self.eta_update(r, &alpha);
                    used[r] = true;
                    new_basic[r] = j;
                }
                None => {
                    // dependent column: leaves the basis at its nearest bound
                    self.x[j] = self.x[j].clamp(self.lo[j], self.up[j]);
                    if !self.x[j].is_finite() {
                        self.x[j] = resting_value(self.lo[j], self.up[j], false);
                    }
                }
            }
        }
        for r in 0..m {
            if !used[r] {
                let art = self.nv + r;
                new_basic[r] = art;
                self.x[art] = 0.0;
            }
        }
        for p in self.pos.iter_mut() {
            *p = NONBASIC;
        }
        for (r, &j) in new_basic.iter().enumerate() {
            self.pos[j] = r;
        }
        // a variable listed twice or an artificial displaced from its row
        // becomes nonbasic at zero
        for j in 0..self.nv + self.m {
            if self.pos[j] == NONBASIC && j >= self.nv {
                self.x[j] = 0.0;
            }
        }
        self.basic = new_basic;
        self.pivots_since_refactor = 0;
    }

    fn compute_basic_values(&mut self) {
        let mut rhs = self.p.eq_rhs.clone();
        for j in 0..self.nv + self.m {
            if self.pos[j] == NONBASIC && self.x[j] != 0.0 {
                let xj = self.x[j];
                self.for_each_entry(j, |r, v| rhs[r] -= v * xj);
            }
        }
        let mut xb = vec![0.0; self.m];
        for (r, &b) in rhs.iter().enumerate() {
            if b != 0.0 {
                for (a, c) in xb.iter_mut().zip(self.binv_col(r)) {
                    *a += b * c;
                }
            }
        }
        for (r, &j) in self.basic.iter().enumerate() {
            self.x[j] = xb[r];
        }
    }

    fn residual(&self) -> f64 {
        let mut ax = vec![0.0; self.m];
        for j in 0..self.nv + self.m {
            let xj = self.x[j];
            if xj != 0.0 {
                self.for_each_entry(j, |r, v| ax[r] += v * xj);
            }
        }
        ax.iter()
            .zip(&self.p.eq_rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn violation(&self, j: usize) -> f64 {
        let v = self.x[j];
        (self.lo[j] - v).max(v - self.up[j]).max(0.0)
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.nv {
            self.p.objective[j]
        } else {
            0.0
        }
    }

    fn basic_costs(&self, phase1: bool) -> Vec<f64> {
        self.basic
            .iter()
            .map(|&j| {
                if phase1 {
                    if self.x[j] < self.lo[j] - TOL_FEAS {
                        -1.0
                    } else if self.x[j] > self.up[j] + TOL_FEAS {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.cost(j)
                }
            })
            .collect()
    }

    /// Entering variable and direction (+1 increase, -1 decrease).
    fn price(&self, y: &[f64], phase1: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.nv {
            if self.pos[j] != NONBASIC || self.lo[j] == self.up[j] {
                continue;
            }
            let c = if phase1 { 0.0 } else { self.cost(j) };
            let d = c - self.col_dot(y, j);
            let xj = self.x[j];
            let can_inc = xj < self.up[j];
            let can_dec = xj > self.lo[j];
            let dir = if d < -TOL_OPT && can_inc {
                1.0
            } else if d > TOL_OPT && can_dec {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64]) -> (Step, f64) {
        let flip = if dir > 0.0 {
            self.up[q] - self.x[q]
        } else {
            self.x[q] - self.lo[q]
        };
        // limits: (row, exact step, relaxed step, targets upper bound)
        let mut cands: Vec<(usize, f64, f64, bool)> = Vec::new();
        for (r, &a) in alpha.iter().enumerate() {
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let j = self.basic[r];
            let rate = -dir * a;
            let (v, lo, up) = (self.x[j], self.lo[j], self.up[j]);
            if rate < 0.0 {
                if v > up + TOL_FEAS {
                    let t = (v - up) / -rate;
                    cands.push((r, t, t, true));
                } else if v >= lo - TOL_FEAS && lo.is_finite() {
                    cands.push((r, (v - lo) / -rate, (v - lo + HARRIS_TOL) / -rate, false));
                }
            } else if v < lo - TOL_FEAS {
                let t = (lo - v) / rate;
                cands.push((r, t, t, false));
            } else if v <= up + TOL_FEAS && up.is_finite() {
                cands.push((r, (up - v) / rate, (up - v + HARRIS_TOL) / rate, true));
            }
        }
        if self.bland {
            let mut best: Option<(usize, f64, bool)> = None;
            for &(r, t, _, to_up) in &cands {
                let t = t.max(0.0);
                let better = match best {
                    None => true,
                    Some((br, bt, _)) => {
                        t < bt - 1e-12 || (t <= bt + 1e-12 && self.basic[r] < self.basic[br])
                    }
                };
                if better {
                    best = Some((r, t, to_up));
                }
            }
            return match best {
                Some((_, t, _)) if flip <= t => (Step::Flip, flip),
                Some((row, t, to_upper)) => (Step::Pivot { row, to_upper }, t),
                None if flip.is_finite() => (Step::Flip, flip),
                None => (Step::Unbounded, f64::INFINITY),
            };
        }
        let t_max = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        if flip <= t_max {
            return if flip.is_finite() {
                (Step::Flip, flip)
            } else {
                (Step::Unbounded, f64::INFINITY)
            };
        }
        let mut best: Option<(usize, f64, bool)> = None;
        let mut best_abs = 0.0;
        for &(r, t, _, to_up) in &cands {
            if t <= t_max && alpha[r].abs() > best_abs {
                best_abs = alpha[r].abs();
                best = Some((r, t.max(0.0), to_up));
            }
        }
        match best {
            Some((row, t, to_upper)) => (Step::Pivot { row, to_upper }, t),
            None => (Step::Unbounded, f64::INFINITY),
        }
    }

    fn run(&mut self) -> Result<LpSolution> {
        let mut verified = false;
        loop {
            if self.iterations > self.max_iterations {
                return Err(Error::SolverFailure(format!(
                    "iteration limit {} reached",
                    self.max_iterations
                )));
            }
            if self.pivots_since_refactor >= REFACTOR_INTERVAL
                || (self.iterations % 10 == 0 && self.residual() > DRIFT_TOL)
            {
                self.refactor();
                self.compute_basic_values();
            }
            let phase1 = self.basic.iter().any(|&j| self.violation(j) > TOL_FEAS);
            let cb = self.basic_costs(phase1);
            let y = self.btran(&cb);
            let Some((q, dir)) = self.price(&y, phase1) else {
                if !verified {
                    verified = true;
                    // a fresh or barely updated factorization needs no rebuild
                    if self.pivots_since_refactor > 0 && self.residual() > VERIFY_TOL {
                        self.refactor();
                        self.compute_basic_values();
                        continue;
                    }
                }
                return if phase1 {
                    self.finish(LpStatus::Infeasible)
                } else {
                    self.finish(LpStatus::Optimal)
                };
            };
            let alpha = self.ftran(q);
            let (step, t) = self.ratio_test(q, dir, &alpha);
            if let Step::Unbounded = step {
                if !verified {
                    self.refactor();
                    self.compute_basic_values();
                    verified = true;
                    continue;
                }
                if phase1 {
                    return Err(Error::SolverFailure(
                        "unbounded ray while minimizing infeasibility".into(),
                    ));
                }
                return self.finish(LpStatus::Unbounded);
            }
            verified = false;
            self.iterations += 1;
            if t < 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > STALL_THRESHOLD {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
                self.bland = false;
            }
            let delta = dir * t;
            for (r, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    let j = self.basic[r];
                    self.x[j] -= delta * a;
                }
            }
            match step {
                Step::Flip => {
                    self.x[q] = if dir > 0.0 { self.up[q] } else { self.lo[q] };
                }
                Step::Pivot { row, to_upper } => {
                    self.x[q] += delta;
                    let leaving = self.basic[row];
                    self.x[leaving] = if to_upper {
                        self.up[leaving]
                    } else {
                        self.lo[leaving]
                    };
                    self.eta_update(row, &alpha);
                    self.basic[row] = q;
                    self.pos[q] = row;
                    self.pos[leaving] = NONBASIC;
                    self.pivots_since_refactor += 1;
                }
                Step::Unbounded => unreachable!(),
            }
        }
    }

    fn finish(&mut self, status: LpStatus) -> Result<LpSolution> {
        let cb = self.basic_costs(false);
        let y = self.btran(&cb);
        let mut reduced = vec![0.0; self.nv];
        let mut dual_obj: f64 = y.iter().zip(&self.p.eq_rhs).map(|(a, b)| a * b).sum();
        for j in 0..self.nv {
            let d = if self.pos[j] == NONBASIC {
                self.cost(j) - self.col_dot(&y, j)
            } else {
                0.0
            };
            reduced[j] = d;
            if d > 0.0 {
                dual_obj += d * self.lo[j];
            } else if d < 0.0 {
                dual_obj += d * self.up[j];
            }
        }
        let x: Vec<f64> = self.x[..self.nv].to_vec();
        let obj = x.iter().zip(&self.p.objective).map(|(a, b)| a * b).sum();

        if status == LpStatus::Optimal {
            let bound_viol = (0..self.nv + self.m)
                .map(|j| self.violation(j))
                .fold(0.0, f64::max);
            let resid = self.residual();
            let scale = 1.0 + self.p.eq_rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if bound_viol > TOL_FEAS || resid > TOL_FEAS * scale {
                return Err(Error::SolverFailure(format!(
                    "optimal basis fails certification (bound violation {bound_viol:e}, residual {resid:e})"
                )));
            }
            for j in 0..self.nv {
                if self.pos[j] != NONBASIC || self.lo[j] == self.up[j] {
                    continue;
                }
                let d = reduced[j];
                let bad = (d < -TOL_OPT && self.x[j] < self.up[j])
                    || (d > TOL_OPT && self.x[j] > self.lo[j]);
                if bad {
                    return Err(Error::SolverFailure(format!(
                        "reduced cost {d:e} of variable {j} violates optimality"
                    )));
                }
            }
        }

        // Rows of B^-1 A for basic artificials; any combination that vanishes
        // is a dependency among the original rows.
        let mut cand: Vec<(usize, Vec<f64>)> = Vec::new();
        for (r, &j) in self.basic.iter().enumerate() {
            if j >= self.nv {
                let row: Vec<f64> = (0..self.m).map(|k| self.binv_col(k)[r]).collect();
                let proj: Vec<f64> = (0..self.nv).map(|c| self.col_dot(&row, c)).collect();
                cand.push((j - self.nv, proj));
            }
        }
        let mut redundant_rows = Vec::new();
        let mut pivots: Vec<(usize, Vec<f64>)> = Vec::new();
        for (row_idx, mut v) in cand {
            for (c, p) in &pivots {
                let f = v[*c] / p[*c];
                if f != 0.0 {
                    for (a, b) in v.iter_mut().zip(p) {
                        *a -= f * b;
                    }
                }
            }
            let (c, mag) = v.iter().enumerate().fold((0, 0.0f64), |acc, (c, x)| {
                if x.abs() > acc.1 {
                    (c, x.abs())
                } else {
                    acc
                }
            });
            if mag <= 1e-9 {
                redundant_rows.push(row_idx);
            } else {
                pivots.push((c, v));
            }
        }
        redundant_rows.sort_unstable();

        let at_upper = (0..self.nv)
            .filter(|&j| {
                self.pos[j] == NONBASIC && self.up[j] > self.lo[j] && self.x[j] == self.up[j]
            })
            .collect();
        Ok(LpSolution {
            status,
            x,
            obj,
            basis: Basis {
                basic: self.basic.clone(),
                at_upper,
            },
            duals: y,
            reduced_costs: reduced,
            dual_obj,
            iterations: self.iterations,
            redundant_rows,
            factorization: Factorization {
                basic: self.basic.clone(),
                binv: self.binv.clone(),
                pivots: self.pivots_since_refactor,
            },
        })
    }
}

fn resting_value(lo: f64, up: f64, prefer_upper: bool) -> f64 {
    if prefer_upper && up.is_finite() {
        up
    } else if lo.is_finite() {
        lo
    } else if up.is_finite() {
        up
    } else {
        0.0
    }
}
