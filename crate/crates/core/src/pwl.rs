//! Piecewise-linear underestimators of `h(x) = -x ln x` on per-cell breakpoint
//! sets, and the convex-combination (lambda) LP over all cells.
//!
//! A cell's underestimator interpolates `h` linearly between consecutive
//! breakpoints. Since `h` is concave, every secant lies below it, so the
//! interpolant never exceeds `h` on `[0, 1]`.

use std::fmt::Write as _;
use std::ops::Range;

use crate::dist::{h, JointDistribution, MarginalPair};
use crate::error::{Error, Result};
use crate::lp::{LpProblem, SparseMatrix};

/// Breakpoints closer than this are treated as duplicates.
pub const MERGE_EPS: f64 = 1e-12;

/// Per-cell strictly increasing breakpoints in `[0, 1]` with cached `h` values.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointGrid {
    n: usize,
    m: usize,
    points: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// Outcome of inserting a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Inserted,
    /// The point was within [`MERGE_EPS`] of an existing breakpoint.
    Stalled,
}

impl BreakpointGrid {
    /// Build from explicit per-cell point lists (row-major cells).
    pub fn from_points(n: usize, m: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != n * m {
            return Err(Error::Domain(format!(
                "{} breakpoint sets for a {n}x{m} grid",
                points.len()
            )));
        }
        for (k, pts) in points.iter().enumerate() {
            let ok = pts.first() == Some(&0.0)
                && pts.last() == Some(&1.0)
                && pts.windows(2).all(|w| w[1] - w[0] >= MERGE_EPS);
            if !ok {
                return Err(Error::Domain(format!(
                    "cell ({}, {}) breakpoints must increase from 0 to 1: {pts:?}",
                    k / m,
                    k % m
                )));
            }
        }
        let values = points
            .iter()
            .map(|pts| pts.iter().map(|&t| h(t)).collect())
            .collect();
        Ok(Self {
            n,
            m,
            points,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        &self.points[i * self.m + j]
    }

    pub fn cell_values(&self, i: usize, j: usize) -> &[f64] {
        &self.values[i * self.m + j]
    }

    pub fn total_breakpoints(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    /// Underestimator of cell `(i, j)` at `x`, using cached values.
    pub fn eval(&self, i: usize, j: usize, x: f64) -> f64 {
        let k = i * self.m + j;
        interpolate(&self.points[k], &self.values[k], x)
    }

    /// `H_T(P) = sum_ij h^T_ij(P_ij)`.
    pub fn surrogate_value(&self, p: &JointDistribution) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for j in 0..self.m {
                total += self.eval(i, j, p.get(i, j));
            }
        }
        total
    }

    /// Insert `x` into the cell's breakpoints, keeping them sorted.
    pub fn add_breakpoint(&mut self, cell: (usize, usize), x: f64) -> Result<Insertion> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("breakpoint {x} outside [0, 1]")));
        }
        let k = cell.0 * self.m + cell.1;
        let pts = &mut self.points[k];
        let idx = pts.partition_point(|&t| t < x);
        let near_left = idx > 0 && x - pts[idx - 1] < MERGE_EPS;
        let near_right = idx < pts.len() && pts[idx] - x < MERGE_EPS;
        if near_left || near_right {
            return Ok(Insertion::Stalled);
        }
        pts.insert(idx, x);
        self.values[k].insert(idx, h(x));
        Ok(Insertion::Inserted)
    }

    /// Index `r` of the segment `[t_r, t_{r+1}]` containing `x`.
    pub fn segment_of(&self, cell: (usize, usize), x: f64) -> usize {
        segment_index(self.cell(cell.0, cell.1), x)
    }

    /// Checkpoint text form:
    ///
    /// ```text
    /// # entrobound grid v1
    /// dims <n> <m>
    /// cell <i> <j> : <t_0> <t_1> ...
    /// ```
    /// Breakpoints print in shortest round-trip form; cached values are
    /// recomputed on load.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# entrobound grid v1\n");
        let _ = writeln!(out, "dims {} {}", self.n, self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                let _ = write!(out, "cell {i} {j} :");
                for t in self.cell(i, j) {
                    let _ = write!(out, " {t:e}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut dims: Option<(usize, usize)> = None;
        let mut points: Vec<Option<Vec<f64>>> = Vec::new();
        for (lineno, line) in text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("dims") => {
                    let n = words.next().and_then(|w| w.parse().ok());
                    let m = words.next().and_then(|w| w.parse().ok());
                    match (n, m) {
                        (Some(n), Some(m)) => {
                            dims = Some((n, m));
                            points = vec![None; n * m];
                        }
                        _ => return Err(bad(lineno, "malformed dims line")),
                    }
                }
                Some("cell") => {
                    let (n, m) = dims.ok_or_else(|| bad(lineno, "cell before dims"))?;
                    let i: usize = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| bad(lineno, "bad row index"))?;
                    let j: usize = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| bad(lineno, "bad column index"))?;
                    if i >= n || j >= m {
                        return Err(bad(lineno, "cell index out of range"));
                    }
                    if words.next() != Some(":") {
                        return Err(bad(lineno, "expected ':'"));
                    }
                    let pts: std::result::Result<Vec<f64>, _> = words.map(str::parse).collect();
                    let pts = pts.map_err(|_| bad(lineno, "bad breakpoint value"))?;
                    if points[i * m + j].replace(pts).is_some() {
                        return Err(bad(lineno, "duplicate cell"));
                    }
                }
                _ => return Err(bad(lineno, "unknown record")),
            }
        }
        let (n, m) = dims.ok_or_else(|| bad(0, "missing dims line"))?;
        let points: Option<Vec<Vec<f64>>> = points.into_iter().collect();
        let points = points.ok_or_else(|| bad(0, "missing cell records"))?;
        Self::from_points(n, m, points)
    }
}

fn segment_index(pts: &[f64], x: f64) -> usize {
    let last_seg = pts.len().saturating_sub(2);
    pts.partition_point(|&t| t <= x)
        .saturating_sub(1)
        .min(last_seg)
}

fn interpolate(pts: &[f64], vals: &[f64], x: f64) -> f64 {
    if pts.len() == 1 {
        return vals[0];
    }
    let r = segment_index(pts, x);
    let (t0, t1) = (pts[r], pts[r + 1]);
    if x == t0 {
        return vals[r];
    }
    if x == t1 {
        return vals[r + 1];
    }
    vals[r] + (vals[r + 1] - vals[r]) / (t1 - t0) * (x - t0)
}

/// Initial breakpoints `{0, min(mu_i, nu_j), 1}` per cell; a minimum that
/// coincides with an endpoint is merged into it.
pub fn init_breakpoints(marg: &MarginalPair) -> BreakpointGrid {
    let (n, m) = (marg.n(), marg.m());
    let points = (0..n * m)
        .map(|k| {
            let cap = marg.cell_cap(k / m, k % m);
            if cap < MERGE_EPS || 1.0 - cap < MERGE_EPS {
                vec![0.0, 1.0]
            } else {
                vec![0.0, cap, 1.0]
            }
        })
        .collect();
    BreakpointGrid::from_points(n, m, points).expect("initial breakpoints are valid")
}

/// Evaluate the underestimator with breakpoints `pts` at `x`.
pub fn surrogate_eval(pts: &[f64], x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("{x} outside [0, 1]")));
    }
    let first = pts.first().copied().unwrap_or(f64::NAN);
    let last = pts.last().copied().unwrap_or(f64::NAN);
    if !(first..=last).contains(&x) {
        return Err(Error::Domain(format!(
            "{x} outside breakpoint range [{first}, {last}]"
        )));
    }
    let vals: Vec<f64> = pts.iter().map(|&t| h(t)).collect();
    Ok(interpolate(pts, &vals, x))
}

/// Cellwise `|h(P_ij) - h^T_ij(P_ij)|` (row-major) and the first cell
/// attaining the maximum.
pub fn surrogate_gap(p: &JointDistribution, grid: &BreakpointGrid) -> (Vec<f64>, (usize, usize)) {
    let mut errors = Vec::with_capacity(p.n() * p.m());
    let mut best = (0, 0);
    let mut best_err = f64::NEG_INFINITY;
    for i in 0..p.n() {
        for j in 0..p.m() {
            let x = p.get(i, j);
            let e = (h(x) - grid.eval(i, j, x)).abs();
            if e > best_err {
                best_err = e;
                best = (i, j);
            }
            errors.push(e);
        }
    }
    (errors, best)
}

/// Column layout of the lambda LP: cell `(i, j)` owns a contiguous block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaMap {
    n: usize,
    m: usize,
    offsets: Vec<usize>,
}

impl LambdaMap {
    /// One weight per breakpoint, cells in row-major order.
    pub fn for_grid(grid: &BreakpointGrid) -> Self {
        let mut offsets = Vec::with_capacity(grid.points.len() + 1);
        offsets.push(0);
        for pts in &grid.points {
            offsets.push(offsets.last().unwrap() + pts.len());
        }
        Self {
            n: grid.n,
            m: grid.m,
            offsets,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_cells(&self) -> usize {
        self.n * self.m
    }

    pub fn num_vars(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Variable range of the cell with row-major index `cell`.
    pub fn block(&self, cell: usize) -> Range<usize> {
        self.offsets[cell]..self.offsets[cell + 1]
    }

    pub fn block_len(&self, cell: usize) -> usize {
        self.offsets[cell + 1] - self.offsets[cell]
    }

    /// `P_ij = sum_r lambda_r t_r` for every cell.
    pub fn plan(&self, grid: &BreakpointGrid, lambda: &[f64]) -> Vec<f64> {
        (0..self.num_cells())
            .map(|c| {
                let pts = &grid.points[c];
                let x: f64 = self.block(c).zip(pts).map(|(v, t)| lambda[v] * t).sum();
                x.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// SOS-2 feasible lambda reproducing `plan`: each cell puts its weight on
    /// the two ends of the segment containing its value.
    pub fn encode(&self, grid: &BreakpointGrid, plan: &[f64]) -> Vec<f64> {
        let mut lambda = vec![0.0; self.num_vars()];
        for (c, &x) in plan.iter().enumerate() {
            let pts = &grid.points[c];
            let base = self.offsets[c];
            if pts.len() == 1 {
                lambda[base] = 1.0;
                continue;
            }
            let r = segment_index(pts, x);
            let w = ((pts[r + 1] - x) / (pts[r + 1] - pts[r])).clamp(0.0, 1.0);
            lambda[base + r] = w;
            lambda[base + r + 1] = 1.0 - w;
        }
        lambda
    }
}

/// Assemble the LP relaxation of the SOS-2 model of `min H_T(P)` over the
/// transportation polytope.
///
/// Rows: one convexity row per cell (`sum_r lambda_r = 1`), then `n` row
/// marginals and `m` column marginals with `P_ij = sum_r lambda_r t_r`
/// substituted. One marginal row is redundant. Weights on breakpoints above
/// `min(mu_i, nu_j)` are fixed at zero since no feasible plan reaches them.
pub fn build_lambda_lp(marg: &MarginalPair, grid: &BreakpointGrid) -> (LpProblem, LambdaMap) {
    let (n, m) = (marg.n(), marg.m());
    assert_eq!(
        (grid.n(), grid.m()),
        (n, m),
        "grid shape must match marginals"
    );
    let cells = n * m;
    let mut offsets = Vec::with_capacity(cells + 1);
    offsets.push(0);
    let mut columns = Vec::new();
    let mut objective = Vec::new();
    let mut upper = Vec::new();
    for c in 0..cells {
        let (i, j) = (c / m, c % m);
        let cap = marg.cell_cap(i, j);
        for (&t, &v) in grid.points[c].iter().zip(&grid.values[c]) {
            columns.push(vec![(c, 1.0), (cells + i, t), (cells + n + j, t)]);
            objective.push(v);
            upper.push(if t > cap + MERGE_EPS { 0.0 } else { 1.0 });
        }
        offsets.push(columns.len());
    }
    let mut rhs = vec![1.0; cells];
    rhs.extend_from_slice(marg.mu());
    rhs.extend_from_slice(marg.nu());
    let nv = columns.len();
    let lp = LpProblem::new(
        objective,
        SparseMatrix::from_columns(cells + n + m, &columns),
        rhs,
        vec![0.0; nv],
        upper,
    )
    .expect("lambda LP dimensions are consistent");
    (lp, LambdaMap { n, m, offsets })
}
