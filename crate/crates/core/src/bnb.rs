//! LP-based branch-and-bound with SOS-2 branching for the piecewise-linear
//! surrogate problem `min H_T(P)` over the transportation polytope.
//!
//! A node restricts every cell to a contiguous window of breakpoints and,
//! inside it, to an interval `[a, b]` of values. Since each surrogate term is
//! concave, its convex envelope on `[a, b]` is the secant through the ends,
//! so the node bound is a transportation LP with secant slopes as costs.
//! With `[a, b]` at window ends this is exactly the relaxation of the
//! lambda formulation restricted to the window, in `n m` variables instead
//! of one per breakpoint.
//!
//! Intervals are tightened from the row and column sums and from reduced
//! costs against the incumbent. Node selection is best-bound first; after
//! each branching the search plunges into one child until that dive is pruned.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::{Duration, Instant};

use log::{debug, trace};

use crate::dist::{h, JointDistribution, MarginalPair};
use crate::error::{Error, Result};
use crate::lp::{
    solve_lp_with, Basis, Factorization, LpProblem, LpSolution, LpStatus, SparseMatrix,
};
use crate::pwl::{BreakpointGrid, LambdaMap, MERGE_EPS};

pub const DEFAULT_INNER_GAP: f64 = 1e-7;
/// Weights below this count as zero when checking SOS-2 adjacency.
const SUPPORT_TOL: f64 = 1e-9;
const PROPAGATION_ROUNDS: usize = 4;
const PROPAGATION_SLACK: f64 = 1e-13;
const PROPAGATION_MIN_GAIN: f64 = 1e-12;
const PROPAGATION_INFEASIBLE: f64 = 1e-9;
/// Secant excess below this is treated as exact.
const EXACT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, Default)]
pub struct MilpLimits {
    pub node_limit: Option<usize>,
    pub time_limit: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct MilpOptions {
    /// Relative gap: stop once `incumbent - bound <= inner_gap * max(1, |incumbent|)`.
    pub inner_gap: f64,
    pub limits: MilpLimits,
    pub record_trace: bool,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            inner_gap: DEFAULT_INNER_GAP,
            limits: MilpLimits::default(),
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
}

/// One processed node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTrace {
    pub node: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
    pub global_bound: f64,
    pub open: usize,
}

/// Write `trace` as CSV with header `node,depth,bound,incumbent,global_bound,open`.
/// Bounds of infeasible nodes print as `inf`.
pub fn write_trace_csv<W: Write>(trace: &[NodeTrace], mut w: W) -> std::io::Result<()> {
    writeln!(w, "node,depth,bound,incumbent,global_bound,open")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{}",
            t.node, t.depth, t.bound, t.incumbent, t.global_bound, t.open
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MilpResult {
    pub incumbent: JointDistribution,
    /// SOS-2 feasible weights encoding `incumbent`.
    pub incumbent_lambda: Vec<f64>,
    /// Surrogate objective at the incumbent.
    pub incumbent_value: f64,
    pub global_lower_bound: f64,
    pub nodes_explored: usize,
    pub status: MilpStatus,
    pub trace: Vec<NodeTrace>,
}

/// A self-contained search node.
#[derive(Debug, Clone)]
pub struct BnbNode {
    /// Inclusive breakpoint-index window per cell (row-major).
    pub windows: Vec<(usize, usize)>,
    /// Value interval per cell, inside the span of its window.
    pub bounds: Vec<(f64, f64)>,
    pub warm: Option<Basis>,
    pub lower_bound: f64,
    pub depth: usize,
}

struct Queued(BnbNode);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // min-heap on the bound; deeper nodes first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .lower_bound
            .total_cmp(&self.0.lower_bound)
            .then(self.0.depth.cmp(&other.0.depth))
    }
}

/// Find the cell whose weights violate SOS-2 adjacency the most.
///
/// Violation mass is the block total minus its heaviest adjacent pair; the
/// first cell with the largest positive mass wins. The suggested split is the
/// mass-weighted median index, moved strictly inside the support so both
/// children exclude part of it. Returns `(cell, split)` with the split index
/// relative to the block start, or `None` if `x` is SOS-2 feasible.
pub fn sos2_violation(x: &[f64], map: &LambdaMap) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut best_mass = 0.0;
    for c in 0..map.num_cells() {
        let block = &x[map.block(c)];
        let support: Vec<usize> = (0..block.len())
            .filter(|&r| block[r] > SUPPORT_TOL)
            .collect();
        let (Some(&lo), Some(&hi)) = (support.first(), support.last()) else {
            continue;
        };
        if hi - lo < 2 {
            continue;
        }
        let total: f64 = block.iter().map(|v| v.max(0.0)).sum();
        let pair = block
            .windows(2)
            .map(|w| w[0].max(0.0) + w[1].max(0.0))
            .fold(0.0, f64::max);
        let mass = total - pair;
        if mass > best_mass {
            let mut acc = 0.0;
            let mut median = hi;
            for (r, v) in block.iter().enumerate() {
                acc += v.max(0.0);
                if acc >= 0.5 * total {
                    median = r;
                    break;
                }
            }
            best_mass = mass;
            best = Some((c, median.clamp(lo + 1, hi - 1)));
        }
    }
    best
}

fn gap_tolerance(inner_gap: f64, incumbent: f64) -> f64 {
    inner_gap * incumbent.abs().max(1.0)
}

/// Transportation LP over the cell values: `n` row-sum rows then `m`
/// column-sum rows. Objective and bounds are filled in per node.
fn transport_lp(marg: &MarginalPair) -> LpProblem {
    let (n, m) = (marg.n(), marg.m());
    let columns: Vec<Vec<(usize, f64)>> = (0..n * m)
        .map(|c| vec![(c / m, 1.0), (n + c % m, 1.0)])
        .collect();
    let mut rhs = marg.mu().to_vec();
    rhs.extend_from_slice(marg.nu());
    let caps: Vec<f64> = (0..n * m).map(|c| marg.cell_cap(c / m, c % m)).collect();
    LpProblem::new(
        vec![0.0; n * m],
        SparseMatrix::from_columns(n + m, &columns),
        rhs,
        vec![0.0; n * m],
        caps,
    )
    .expect("transportation LP dimensions are consistent")
}

/// Shrink cell intervals using the row and column sums. Returns `false` if
/// some sum can no longer be met.
fn propagate(bounds: &mut [(f64, f64)], lines: &[(f64, Vec<usize>)]) -> bool {
    for _ in 0..PROPAGATION_ROUNDS {
        let mut changed = false;
        for (total, cells) in lines {
            let sum_lo: f64 = cells.iter().map(|&c| bounds[c].0).sum();
            let sum_hi: f64 = cells.iter().map(|&c| bounds[c].1).sum();
            if sum_lo > total + PROPAGATION_INFEASIBLE || sum_hi < total - PROPAGATION_INFEASIBLE {
                return false;
            }
            for &c in cells {
                let (a, b) = bounds[c];
                let new_a = total - (sum_hi - b);
                let new_b = total - (sum_lo - a);
                let (mut a2, mut b2) = (a, b);
                if new_a > a + PROPAGATION_MIN_GAIN {
                    a2 = new_a;
                    changed = true;
                }
                if new_b < b - PROPAGATION_MIN_GAIN {
                    b2 = new_b;
                    changed = true;
                }
                if a2 > b2 {
                    if a2 - b2 > PROPAGATION_INFEASIBLE {
                        return false;
                    }
                    let mid = 0.5 * (a2 + b2);
                    a2 = mid;
                    b2 = mid;
                }
                bounds[c] = (a2, b2);
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Shrink intervals of nonbasic cells that cannot move far from their bound
/// without the LP bound exceeding the incumbent.
fn tighten_by_reduced_cost(bounds: &mut [(f64, f64)], sol: &LpSolution, room: f64) {
    for (c, (&d, &x)) in sol.reduced_costs.iter().zip(&sol.x).enumerate() {
        let (a, b) = bounds[c];
        if d > EXACT_TOL && x <= a + EXACT_TOL {
            bounds[c].1 = b.min(a + room / d + PROPAGATION_SLACK);
        } else if d < -EXACT_TOL && x >= b - EXACT_TOL {
            bounds[c].0 = a.max(b - room / -d - PROPAGATION_SLACK);
        }
    }
}

/// Smallest breakpoint window covering `[a, b]`.
fn covering_window(pts: &[f64], a: f64, b: f64) -> (usize, usize) {
    let lo = pts.partition_point(|&t| t <= a).saturating_sub(1);
    let hi = pts.partition_point(|&t| t < b).min(pts.len() - 1).max(lo);
    (lo, hi)
}

/// Breakpoint strictly inside `(a, b)` closest to `x`; lowest index on ties.
fn split_point(pts: &[f64], a: f64, b: f64, x: f64) -> Option<usize> {
    let first = pts.partition_point(|&t| t <= a + MERGE_EPS);
    let last = pts.partition_point(|&t| t < b - MERGE_EPS);
    (first..last).min_by(|&r, &s| (pts[r] - x).abs().total_cmp(&(pts[s] - x).abs()))
}

/// Cell where the surrogate exceeds its secant at `x` the most that still has a breakpoint
/// inside its interval, with that breakpoint's index.
fn choose_branch(
    bounds: &[(f64, f64)],
    x: &[f64],
    grid: &BreakpointGrid,
) -> Option<(usize, usize)> {
    let m = grid.m();
    let mut best: Option<(f64, usize, usize)> = None;
    for (c, &(a, b)) in bounds.iter().enumerate() {
        if b - a <= 2.0 * MERGE_EPS {
            continue;
        }
        let (i, j) = (c / m, c % m);
        let v = x[c].clamp(a, b);
        let fa = grid.eval(i, j, a);
        let fb = grid.eval(i, j, b);
        let secant = fa + (fb - fa) / (b - a) * (v - a);
        let excess = grid.eval(i, j, v) - secant;
        if excess <= EXACT_TOL || best.is_some_and(|(e, _, _)| excess <= e) {
            continue;
        }
        if let Some(r) = split_point(grid.cell(i, j), a, b, v) {
            best = Some((excess, c, r));
        }
    }
    best.map(|(_, c, r)| (c, r))
}

/// Move `plan` to a vertex of the transportation polytope without raising
/// the surrogate.
///
/// While the support graph (rows and columns joined by positive cells) has a
/// cycle, mass is shifted around it with alternating signs. The surrogate is
/// concave along that line, so one of the two endpoints is no worse; the move
/// empties at least one cell.
pub(crate) fn move_to_vertex(plan: &mut [f64], grid: &BreakpointGrid) {
    let (n, m) = (grid.n(), grid.m());
    while let Some(cycle) = support_cycle(plan, n, m) {
        let mut up = f64::INFINITY;
        let mut down = f64::INFINITY;
        for (k, &c) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                down = down.min(plan[c]);
            } else {
                up = up.min(plan[c]);
            }
        }
        let delta = |t: f64| -> f64 {
            cycle
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let s = if k % 2 == 0 { t } else { -t };
                    let (i, j) = (c / m, c % m);
                    grid.eval(i, j, (plan[c] + s).max(0.0)) - grid.eval(i, j, plan[c])
                })
                .sum()
        };
        let t = if delta(up) <= delta(-down) { up } else { -down };
        let mut emptied = false;
        for (k, &c) in cycle.iter().enumerate() {
            let s = if k % 2 == 0 { t } else { -t };
            let blocking = if t > 0.0 {
                k % 2 == 1 && plan[c] == up
            } else {
                k % 2 == 0 && plan[c] == down
            };
            if blocking && !emptied {
                plan[c] = 0.0;
                emptied = true;
            } else {
                plan[c] = (plan[c] + s).max(0.0);
            }
        }
    }
}

/// Cells of a cycle in the support graph, in cycle order, or `None` when the
/// support is a forest.
fn support_cycle(plan: &[f64], n: usize, m: usize) -> Option<Vec<usize>> {
    // vertices: rows 0..n, columns n..n+m; adjacency holds (neighbour, cell)
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn root(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for (c, &x) in plan.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        let (r, col) = (c / m, n + c % m);
        let (a, b) = (root(&mut parent, r), root(&mut parent, col));
        if a != b {
            parent[a] = b;
            adj[r].push((col, c));
            adj[col].push((r, c));
            continue;
        }
        // path from r to col through the forest closes the cycle
        let mut via: Vec<Option<(usize, usize)>> = vec![None; n + m];
        let mut seen = vec![false; n + m];
        let mut queue = std::collections::VecDeque::from([r]);
        seen[r] = true;
        while let Some(v) = queue.pop_front() {
            if v == col {
                break;
            }
            for &(w, e) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    via[w] = Some((v, e));
                    queue.push_back(w);
                }
            }
        }
        let mut path = Vec::new();
        let mut v = col;
        while let Some((u, e)) = via[v] {
            path.push(e);
            v = u;
        }
        // cycle: the new cell, then the path back from col to r
        let mut cycle = vec![c];
        cycle.extend(path);
        return Some(cycle);
    }
    None
}

/// Search frontier carried between solves on successively refined grids.
///
/// Refining a grid only raises the surrogate, so stored leaf bounds stay
/// valid. Leaves are dropped or trimmed only against the true entropy of the
/// best plan seen (the anchor), which bounds every later surrogate optimum
/// from above; the anchor is always offered as an incumbent.
///
/// A state must only be reused with the same marginals and a grid that
/// refines the one it was last used with.
#[derive(Debug, Clone, Default)]
pub struct SearchState {
    started: bool,
    leaves: Vec<BnbNode>,
    anchor: Option<(f64, Vec<f64>)>,
}

impl SearchState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaves that may need exploring on a finer grid.
    pub fn open_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Lowest true entropy among plans seen so far.
    pub fn anchor_entropy(&self) -> Option<f64> {
        self.anchor.as_ref().map(|a| a.0)
    }
}

type Scored = Option<(f64, Vec<f64>)>;

/// Globally minimize the piecewise-linear surrogate defined by `grid` over
/// plans with marginals `marg`.
///
/// `initial` may supply any feasible plan as a starting incumbent.
pub fn solve_sos2_milp(
    marg: &MarginalPair,
    grid: &BreakpointGrid,
    options: &MilpOptions,
    initial: Option<&JointDistribution>,
) -> Result<MilpResult> {
    solve_sos2_milp_from(marg, grid, options, initial, &mut SearchState::new())
}

/// [`solve_sos2_milp`] continuing from the frontier in `state`, which is
/// updated for the next refinement.
pub fn solve_sos2_milp_from(
    marg: &MarginalPair,
    grid: &BreakpointGrid,
    options: &MilpOptions,
    initial: Option<&JointDistribution>,
    state: &mut SearchState,
) -> Result<MilpResult> {
    if options.inner_gap <= 0.0 || options.inner_gap.is_nan() {
        return Err(Error::Domain(format!(
            "inner gap must be positive, got {}",
            options.inner_gap
        )));
    }
    let start = Instant::now();
    let (n, m) = (marg.n(), marg.m());
    assert_eq!(
        (grid.n(), grid.m()),
        (n, m),
        "grid shape must match marginals"
    );
    let cells = n * m;
    let mut lp = transport_lp(marg);
    let pts = |c: usize| grid.cell(c / m, c % m);
    let lines: Vec<(f64, Vec<usize>)> = (0..n)
        .map(|i| (marg.mu()[i], (0..m).map(|j| i * m + j).collect()))
        .chain((0..m).map(|j| (marg.nu()[j], (0..n).map(|i| i * m + j).collect())))
        .collect();

    // incumbent ranks plans by surrogate value, anchor by true entropy
    let mut incumbent: Scored = None;
    let mut anchor: Scored = state.anchor.take();
    let offer = |plan: &[f64], incumbent: &mut Scored, anchor: &mut Scored| {
        let mut plan = plan.to_vec();
        move_to_vertex(&mut plan, grid);
        let value: f64 = (0..cells).map(|c| grid.eval(c / m, c % m, plan[c])).sum();
        if incumbent.as_ref().map_or(true, |(inc, _)| value < *inc) {
            *incumbent = Some((value, plan.to_vec()));
        }
        let entropy: f64 = plan.iter().map(|&x| h(x)).sum();
        if anchor.as_ref().map_or(true, |(a, _)| entropy < *a) {
            *anchor = Some((entropy, plan.to_vec()));
        }
    };
    if let Some((_, plan)) = anchor.clone() {
        assert_eq!(
            plan.len(),
            cells,
            "search state belongs to another instance"
        );
        offer(&plan, &mut incumbent, &mut anchor);
    }
    if let Some(p) = initial {
        assert_eq!((p.n(), p.m()), (n, m), "initial incumbent shape");
        offer(p.as_slice(), &mut incumbent, &mut anchor);
    }

    let mut heap: BinaryHeap<Queued> = std::mem::take(&mut state.leaves)
        .into_iter()
        .map(Queued)
        .collect();
    let mut dive = None;
    // factorization of the dive node's warm basis
    let mut dive_factor: Option<Factorization> = None;
    if !state.started {
        let root_bounds: Vec<(f64, f64)> = (0..cells).map(|c| (0.0, lp.upper[c])).collect();
        let root_windows = (0..cells)
            .map(|c| covering_window(pts(c), root_bounds[c].0, root_bounds[c].1))
            .collect();
        dive = Some(BnbNode {
            windows: root_windows,
            bounds: root_bounds,
            warm: None,
            lower_bound: f64::NEG_INFINITY,
            depth: 0,
        });
        state.started = true;
    }

    let mut dormant = Vec::new();
    let mut nodes = 0usize;
    let mut pruned_bound = f64::INFINITY;
    let mut trace = Vec::new();
    let mut status = MilpStatus::Optimal;
    let cutoff = |anchor: &Scored| anchor.as_ref().map_or(f64::INFINITY, |a| a.0);

    loop {
        let (mut node, factor) = match dive.take() {
            Some(node) => (node, dive_factor.take()),
            None => match heap.pop() {
                Some(Queued(node)) => (node, None),
                None => break,
            },
        };
        if let Some((inc, _)) = &incumbent {
            if node.lower_bound >= inc - gap_tolerance(options.inner_gap, *inc) {
                pruned_bound = pruned_bound.min(node.lower_bound);
                if node.lower_bound < cutoff(&anchor) {
                    dormant.push(node);
                }
                continue;
            }
        }
        if options.limits.node_limit.is_some_and(|cap| nodes >= cap) {
            status = MilpStatus::NodeLimit;
            heap.push(Queued(node));
            break;
        }
        if options
            .limits
            .time_limit
            .is_some_and(|cap| start.elapsed() >= cap)
        {
            status = MilpStatus::TimeLimit;
            heap.push(Queued(node));
            break;
        }
        nodes += 1;
        let depth = node.depth;

        let mut bound = f64::INFINITY;
        if propagate(&mut node.bounds, &lines) {
            let mut constant = 0.0;
            for c in 0..cells {
                let (a, b) = node.bounds[c];
                node.windows[c] = covering_window(pts(c), a, b);
                let fa = grid.eval(c / m, c % m, a);
                let fb = grid.eval(c / m, c % m, b);
                let slope = if b > a { (fb - fa) / (b - a) } else { 0.0 };
                constant += fa - slope * a;
                lp.objective[c] = slope;
                lp.lower[c] = a;
                lp.upper[c] = b;
            }
            let sol = solve_lp_with(&lp, node.warm.as_ref(), factor.as_ref())?;
            match sol.status {
                LpStatus::Optimal => {
                    bound = (sol.obj + constant).max(node.lower_bound);
                    let p = JointDistribution::from_plan(n, m, sol.x.clone())?;
                    let before = incumbent.as_ref().map(|i| i.0);
                    offer(p.as_slice(), &mut incumbent, &mut anchor);
                    let inc = incumbent.as_ref().map(|i| i.0).unwrap();
                    if before != Some(inc) {
                        trace!("node {nodes}: incumbent {inc:.12}");
                    }
                    let limit = cutoff(&anchor);
                    let mut branch = None;
                    if bound < inc - gap_tolerance(options.inner_gap, inc) {
                        tighten_by_reduced_cost(&mut node.bounds, &sol, limit - bound);
                        branch = choose_branch(&node.bounds, &sol.x, grid);
                        if branch.is_none() {
                            debug!("node {nodes}: gap {:e} without a split point", inc - bound);
                        }
                    }
                    node.warm = Some(sol.basis);
                    node.lower_bound = bound;
                    match branch {
                        None => {
                            pruned_bound = pruned_bound.min(bound);
                            if bound < limit {
                                dormant.push(node);
                            }
                        }
                        Some((cell, r)) => {
                            let t = pts(cell)[r];
                            let (a, b) = node.bounds[cell];
                            let (lo, hi) = node.windows[cell];
                            node.depth += 1;
                            let mut left = node.clone();
                            left.bounds[cell] = (a, t);
                            left.windows[cell] = (lo.min(r), r);
                            let mut right = node;
                            right.bounds[cell] = (t, b);
                            right.windows[cell] = (r, hi.max(r));
                            // plunge toward the side holding the LP value
                            if sol.x[cell] <= t {
                                heap.push(Queued(right));
                                dive = Some(left);
                            } else {
                                heap.push(Queued(left));
                                dive = Some(right);
                            }
                            dive_factor = Some(sol.factorization);
                        }
                    }
                }
                LpStatus::Infeasible if depth == 0 => {
                    return Err(Error::Internal(
                        "transportation LP infeasible at the root; marginals are inconsistent"
                            .into(),
                    ))
                }
                LpStatus::Infeasible => {}
                LpStatus::Unbounded => {
                    return Err(Error::Internal(
                        "bounded transportation LP reported unbounded".into(),
                    ))
                }
            }
        }

        if options.record_trace {
            let inc_now = incumbent.as_ref().map_or(f64::INFINITY, |i| i.0);
            let frontier = heap
                .peek()
                .map_or(f64::INFINITY, |q: &Queued| q.0.lower_bound)
                .min(dive.as_ref().map_or(f64::INFINITY, |d| d.lower_bound));
            trace.push(NodeTrace {
                node: nodes,
                depth,
                bound,
                incumbent: inc_now,
                global_bound: frontier.min(pruned_bound).min(inc_now),
                open: heap.len() + usize::from(dive.is_some()),
            });
        }
    }

    let (value, plan) = incumbent
        .ok_or_else(|| Error::Internal("branch-and-bound ended without a feasible plan".into()))?;
    let open_bound = heap
        .iter()
        .map(|q| q.0.lower_bound)
        .chain(dive.iter().map(|d| d.lower_bound))
        .fold(f64::INFINITY, f64::min);
    let global_lower_bound = value.min(pruned_bound).min(open_bound);
    debug!(
        "sos2 milp {n}x{m}: {nodes} nodes, value {value:.12}, bound {global_lower_bound:.12}, {:?}, {} leaves kept",
        status,
        dormant.len() + heap.len()
    );
    dormant.extend(heap.into_iter().map(|q| q.0));
    dormant.extend(dive);
    state.leaves = dormant;
    state.anchor = anchor;

    let map = LambdaMap::for_grid(grid);
    let incumbent_lambda = map.encode(grid, &plan);
    Ok(MilpResult {
        incumbent: JointDistribution::from_plan(n, m, plan)?,
        incumbent_lambda,
        incumbent_value: value,
        global_lower_bound,
        nodes_explored: nodes,
        status,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwl::init_breakpoints;
    use approx::assert_abs_diff_eq;

    fn marg(mu: &[f64], nu: &[f64]) -> MarginalPair {
        MarginalPair::new(mu.to_vec(), nu.to_vec()).unwrap()
    }

    fn map_for(lens: &[usize]) -> LambdaMap {
        // a 1 x k instance with the requested block lengths
        let k = lens.len();
        let pts: Vec<Vec<f64>> = lens
            .iter()
            .map(|&l| (0..l).map(|r| r as f64 / (l - 1) as f64).collect())
            .collect();
        let grid = BreakpointGrid::from_points(1, k, pts).unwrap();
        let nu = vec![1.0 / k as f64; k];
        let _ = nu;
        LambdaMap::for_grid(&grid)
    }

    #[test]
    fn violation_examples() {
        let map = map_for(&[3]);
        assert_eq!(sos2_violation(&[0.0, 1.0, 0.0], &map), None);
        assert_eq!(sos2_violation(&[0.5, 0.0, 0.5], &map), Some((0, 1)));
        assert_eq!(sos2_violation(&[0.2, 0.8, 0.0], &map), None);
    }

    #[test]
    fn violation_picks_largest_mass() {
        let map = map_for(&[3, 5]);
        let x = [0.9, 0.0, 0.1, 0.4, 0.0, 0.0, 0.0, 0.6];
        // cell 0 mass 0.1, cell 1 mass 0.4; median of cell 1 is index 4, moved inside (0, 4)
        assert_eq!(sos2_violation(&x, &map), Some((1, 3)));
    }

    #[test]
    fn uniform_two_by_two() {
        let mu = marg(&[0.5, 0.5], &[0.5, 0.5]);
        let g = init_breakpoints(&mu);
        let r = solve_sos2_milp(&mu, &g, &MilpOptions::default(), None).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_abs_diff_eq!(r.incumbent_value, 2f64.ln(), epsilon = 1e-9);
        let p = r.incumbent.as_slice();
        let diag = (p[0] - 0.5).abs() < 1e-9 && (p[3] - 0.5).abs() < 1e-9;
        let anti = (p[1] - 0.5).abs() < 1e-9 && (p[2] - 0.5).abs() < 1e-9;
        assert!(diag || anti, "{p:?}");
    }

    #[test]
    fn singleton_row() {
        let mu = marg(&[1.0], &[0.3, 0.7]);
        let g = init_breakpoints(&mu);
        let r = solve_sos2_milp(&mu, &g, &MilpOptions::default(), None).unwrap();
        assert_abs_diff_eq!(r.incumbent.get(0, 0), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(r.incumbent.get(0, 1), 0.7, epsilon = 1e-12);
        let expected = g.eval(0, 0, 0.3) + g.eval(0, 1, 0.7);
        assert_abs_diff_eq!(r.incumbent_value, expected, epsilon = 1e-12);
        assert_eq!(r.nodes_explored, 1);
    }

    #[test]
    fn asymmetric_two_by_two_prefers_p11_at_cap() {
        // P11 in [0.3, 0.6]; the surrogate is concave along this segment so the
        // optimum is an endpoint; evaluate both
        let mu = marg(&[0.6, 0.4], &[0.7, 0.3]);
        let g = init_breakpoints(&mu);
        let at = |p11: f64| {
            let p =
                JointDistribution::from_rows(&[vec![p11, 0.6 - p11], vec![0.7 - p11, p11 - 0.3]])
                    .unwrap();
            g.surrogate_value(&p)
        };
        let (lo_end, hi_end) = (at(0.3), at(0.6));
        assert!(hi_end < lo_end);
        let r = solve_sos2_milp(&mu, &g, &MilpOptions::default(), None).unwrap();
        assert_abs_diff_eq!(r.incumbent.get(0, 0), 0.6, epsilon = 1e-9);
        assert_abs_diff_eq!(r.incumbent_value, hi_end, epsilon = 1e-9);
    }

    #[test]
    fn limits_and_trace() {
        let mu = marg(&[0.3, 0.3, 0.4], &[0.25, 0.35, 0.4]);
        let mut g = init_breakpoints(&mu);
        for c in 0..9 {
            g.add_breakpoint((c / 3, c % 3), 0.05 + 0.02 * c as f64)
                .unwrap();
        }
        let opts = MilpOptions {
            record_trace: true,
            ..MilpOptions::default()
        };
        let full = solve_sos2_milp(&mu, &g, &opts, None).unwrap();
        assert_eq!(full.status, MilpStatus::Optimal);
        assert_eq!(full.trace.len(), full.nodes_explored);
        let mut csv = Vec::new();
        write_trace_csv(&full.trace, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("node,depth,bound,incumbent,global_bound,open\n"));
        assert_eq!(text.lines().count(), full.nodes_explored + 1);

        let capped = MilpOptions {
            limits: MilpLimits {
                node_limit: Some(1),
                time_limit: None,
            },
            ..MilpOptions::default()
        };
        let r = solve_sos2_milp(&mu, &g, &capped, None).unwrap();
        assert!(r.nodes_explored <= 1);
        if r.status != MilpStatus::Optimal {
            assert_eq!(r.status, MilpStatus::NodeLimit);
            assert!(r.global_lower_bound <= r.incumbent_value);
        }
        assert!(solve_sos2_milp(
            &mu,
            &g,
            &MilpOptions {
                inner_gap: 0.0,
                ..MilpOptions::default()
            },
            None
        )
        .is_err());
    }
}
