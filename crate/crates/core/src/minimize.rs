//! Minimum entropy under fixed marginals by alternating global surrogate
//! solves with breakpoint refinement.
//!
//! Each outer iteration `k` globally minimizes the piecewise-linear surrogate
//! `H_k`, finds the cell where `h` and its underestimator disagree most at the
//! minimizer `P_k`, adds `P_k`'s entry there as a breakpoint, and measures the
//! relative gap `|H(P_k) - H_k(P_k)| / |H_k(P_k)|`. The loop stops once that
//! gap falls below `eps`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::Serialize;

use crate::bnb::{
    solve_sos2_milp_from, MilpLimits, MilpOptions, MilpStatus, SearchState, DEFAULT_INNER_GAP,
};
use crate::dist::{entropy, EntropyValue, JointDistribution, MarginalPair, TOL_DENOM};
use crate::error::{Error, Result};
use crate::pwl::{init_breakpoints, surrogate_gap, BreakpointGrid, Insertion, MERGE_EPS};

/// Default relative tolerance.
pub const EPS_DEFAULT: f64 = 1e-4;
/// Relative tolerance of the fast mode.
pub const EPS_FAST: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Checkpointing {
    pub dir: PathBuf,
    /// Write a checkpoint every this many outer iterations.
    pub every: usize,
    /// Continue from an existing checkpoint in `dir` if one is present.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct MinOptions {
    pub eps: f64,
    pub inner_gap: f64,
    /// Outer iteration cap; `None` uses `10 n m ceil(log2(1/eps))`.
    pub max_iterations: Option<usize>,
    /// Node cap per surrogate solve.
    pub node_limit: Option<usize>,
    /// Wall-clock cap for the whole minimization.
    pub time_limit: Option<Duration>,
    /// Refine every cell with positive error each iteration instead of only
    /// the worst one.
    pub refine_all: bool,
    pub checkpoint: Option<Checkpointing>,
}

impl Default for MinOptions {
    fn default() -> Self {
        Self {
            eps: EPS_DEFAULT,
            inner_gap: DEFAULT_INNER_GAP,
            max_iterations: None,
            node_limit: None,
            time_limit: None,
            refine_all: false,
            checkpoint: None,
        }
    }
}

impl MinOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

/// Default outer iteration cap.
pub fn default_iteration_cap(n: usize, m: usize, eps: f64) -> usize {
    let bits = (1.0 / eps).log2().ceil().max(1.0) as usize;
    10 * n * m * bits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MinStatus {
    Converged,
    IterationLimit,
    /// Refinement could not add a new breakpoint.
    Stalled,
    NodeLimit,
    TimeLimit,
}

/// Bookkeeping for one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `H(P_k)`.
    pub h_true: f64,
    /// `H_k(P_k)`, on the grid used to compute `P_k`.
    pub h_surrogate: f64,
    pub eps_k: f64,
    /// `eps_k` is an absolute gap because `H_k(P_k)` was within the guard of zero.
    pub absolute_gap: bool,
    pub nodes: usize,
    pub refined_cell: (usize, usize),
    pub breakpoint: f64,
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct MinResult {
    pub p_min: JointDistribution,
    pub h_min: EntropyValue,
    pub h_surrogate: f64,
    pub eps_history: Vec<f64>,
    pub iterations: usize,
    pub total_nodes: usize,
    pub status: MinStatus,
    pub records: Vec<IterationRecord>,
    pub grid: BreakpointGrid,
}

impl MinResult {
    pub fn final_eps(&self) -> f64 {
        self.eps_history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Gap history as CSV (`k,h_true,h_surrogate,eps_k,absolute,nodes,cell_i,cell_j,breakpoint,stalled`).
    pub fn history_csv(&self) -> String {
        let mut out = String::from(
            "k,h_true,h_surrogate,eps_k,absolute,nodes,cell_i,cell_j,breakpoint,stalled\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{},{},{},{},{:.12e},{}\n",
                r.k,
                r.h_true,
                r.h_surrogate,
                r.eps_k,
                r.absolute_gap,
                r.nodes,
                r.refined_cell.0,
                r.refined_cell.1,
                r.breakpoint,
                r.stalled
            ));
        }
        out
    }
}

struct State {
    grid: BreakpointGrid,
    k: usize,
    eps_history: Vec<f64>,
    incumbent: Option<JointDistribution>,
}

/// Run the alternation loop from the initial grid `{0, min(mu_i, nu_j), 1}`.
pub fn minimize_entropy(marg: &MarginalPair, options: &MinOptions) -> Result<MinResult> {
    if options.eps.is_nan() || options.eps <= 0.0 {
        return Err(Error::Domain(format!(
            "eps must be positive, got {}",
            options.eps
        )));
    }
    let start = Instant::now();
    let (n, m) = (marg.n(), marg.m());
    let cap = options
        .max_iterations
        .unwrap_or_else(|| default_iteration_cap(n, m, options.eps));

    let mut state = match &options.checkpoint {
        Some(cp) if cp.resume && checkpoint_path(&cp.dir).exists() => {
            let s = load_checkpoint(&cp.dir)?;
            if (s.grid.n(), s.grid.m()) != (n, m) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint grid is {}x{}, instance is {n}x{m}",
                    s.grid.n(),
                    s.grid.m()
                )));
            }
            info!("resuming at iteration {} from {}", s.k, cp.dir.display());
            s
        }
        _ => State {
            grid: init_breakpoints(marg),
            k: 0,
            eps_history: Vec::new(),
            incumbent: None,
        },
    };

    // grids only get refined, so the search frontier carries over
    let mut search = SearchState::new();
    let mut records = Vec::new();
    let mut total_nodes = 0;
    let mut last: Option<(JointDistribution, f64, f64)> = None;
    let mut status = MinStatus::Converged;

    loop {
        let eps_k = state.eps_history.last().copied().unwrap_or(f64::INFINITY);
        if eps_k < options.eps {
            break;
        }
        if state.k >= cap {
            status = MinStatus::IterationLimit;
            break;
        }
        let remaining = match options.time_limit {
            Some(limit) => {
                let left = limit.saturating_sub(start.elapsed());
                if left.is_zero() {
                    status = MinStatus::TimeLimit;
                    break;
                }
                Some(left)
            }
            None => None,
        };
        state.k += 1;
        let milp_opts = MilpOptions {
            inner_gap: options.inner_gap,
            limits: MilpLimits {
                node_limit: options.node_limit,
                time_limit: remaining,
            },
            record_trace: false,
        };
        let milp = solve_sos2_milp_from(
            marg,
            &state.grid,
            &milp_opts,
            state.incumbent.as_ref(),
            &mut search,
        )?;
        total_nodes += milp.nodes_explored;
        let p_k = milp.incumbent;
        let h_k = milp.incumbent_value;
        let h_true = entropy(&p_k).0;

        let (errors, cell) = surrogate_gap(&p_k, &state.grid);
        let x = p_k.get(cell.0, cell.1);
        let (stalled, exhausted) = refine(&mut state.grid, cell, x)?;
        if options.refine_all {
            for (c, &e) in errors.iter().enumerate() {
                let other = (c / m, c % m);
                if e > 0.0 && other != cell {
                    state
                        .grid
                        .add_breakpoint(other, p_k.get(other.0, other.1))?;
                }
            }
        }

        let absolute_gap = h_k.abs() <= TOL_DENOM;
        let eps_k = if absolute_gap {
            (h_true - h_k).abs()
        } else {
            ((h_true - h_k) / h_k).abs()
        };
        debug!(
            "iteration {}: H={h_true:.12} H_k={h_k:.12} eps_k={eps_k:.3e} nodes={} cell={cell:?}",
            state.k, milp.nodes_explored
        );
        state.eps_history.push(eps_k);
        records.push(IterationRecord {
            k: state.k,
            h_true,
            h_surrogate: h_k,
            eps_k,
            absolute_gap,
            nodes: milp.nodes_explored,
            refined_cell: cell,
            breakpoint: x,
            stalled,
        });
        state.incumbent = Some(p_k.clone());
        last = Some((p_k, h_true, h_k));

        if let Some(cp) = &options.checkpoint {
            if cp.every > 0 && state.k % cp.every == 0 {
                save_checkpoint(&cp.dir, &state)?;
            }
        }
        match milp.status {
            MilpStatus::Optimal => {}
            MilpStatus::NodeLimit => {
                status = MinStatus::NodeLimit;
                break;
            }
            MilpStatus::TimeLimit => {
                status = MinStatus::TimeLimit;
                break;
            }
        }
        if exhausted && eps_k >= options.eps {
            status = MinStatus::Stalled;
            break;
        }
    }

    let (p_min, h_true, h_k) = match last {
        Some(v) => v,
        None => {
            // resumed from a converged checkpoint, or no iteration ran
            let p = state.incumbent.clone().ok_or_else(|| {
                Error::Internal("minimization ended before the first surrogate solve".into())
            })?;
            let h_true = entropy(&p).0;
            let h_k = state.grid.surrogate_value(&p);
            (p, h_true, h_k)
        }
    };
    Ok(MinResult {
        p_min,
        h_min: EntropyValue(h_true),
        h_surrogate: h_k,
        eps_history: state.eps_history,
        iterations: state.k,
        total_nodes,
        status,
        records,
        grid: state.grid,
    })
}

/// Insert `x` into `cell`; if it duplicates a breakpoint, insert the midpoint
/// of the segment starting at it instead. Returns `(stalled, exhausted)`,
/// where `exhausted` means neither insertion succeeded.
fn refine(grid: &mut BreakpointGrid, cell: (usize, usize), x: f64) -> Result<(bool, bool)> {
    if grid.add_breakpoint(cell, x)? == Insertion::Inserted {
        return Ok((false, false));
    }
    let pts = grid.cell(cell.0, cell.1);
    let r = grid.segment_of(cell, x);
    let mid = 0.5 * (pts[r] + pts[r + 1]);
    let exhausted = pts[r + 1] - pts[r] < 2.0 * MERGE_EPS
        || grid.add_breakpoint(cell, mid)? == Insertion::Stalled;
    Ok((true, exhausted))
}

/// Exact minimum over the vertices of the transportation polytope.
///
/// Every vertex is the unique solution supported on a spanning tree of the
/// complete bipartite row/column graph; all such trees are enumerated.
pub fn brute_force_min(marg: &MarginalPair) -> Result<(EntropyValue, JointDistribution)> {
    let (n, m) = (marg.n(), marg.m());
    if n + m > 10 {
        return Err(Error::SizeGuard(format!(
            "vertex enumeration limited to n + m <= 10, got {n} + {m}"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut chosen = Vec::with_capacity(n + m - 1);
    let mut parent: Vec<usize> = (0..n + m).collect();
    enumerate_trees(n, m, 0, &mut chosen, &mut parent, &mut |edges| {
        if let Some(plan) = tree_plan(marg, edges) {
            let p = JointDistribution::from_plan(n, m, plan.clone()).ok()?;
            let value = entropy(&p).0;
            if best.as_ref().map_or(true, |b| value < b.0) {
                best = Some((value, plan));
            }
        }
        Some(())
    });
    let (value, plan) = best.ok_or_else(|| Error::Internal("no vertex found".into()))?;
    Ok((
        EntropyValue(value),
        JointDistribution::from_plan(n, m, plan)?,
    ))
}

fn find(parent: &[usize], mut v: usize) -> usize {
    while parent[v] != v {
        v = parent[v];
    }
    v
}

fn enumerate_trees(
    n: usize,
    m: usize,
    next: usize,
    chosen: &mut Vec<usize>,
    parent: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Option<()>,
) {
    let need = n + m - 1;
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    let cells = n * m;
    if cells - next < need - chosen.len() {
        return;
    }
    let (i, j) = (next / m, next % m);
    let (a, b) = (find(parent, i), find(parent, n + j));
    if a != b {
        let saved = parent.clone();
        parent[a] = b;
        chosen.push(next);
        enumerate_trees(n, m, next + 1, chosen, parent, visit);
        chosen.pop();
        *parent = saved;
    }
    enumerate_trees(n, m, next + 1, chosen, parent, visit);
}

/// Solve the marginal equations on a spanning tree by peeling leaves.
fn tree_plan(marg: &MarginalPair, edges: &[usize]) -> Option<Vec<f64>> {
    let (n, m) = (marg.n(), marg.m());
    let mut residual: Vec<f64> = marg.mu().iter().chain(marg.nu()).copied().collect();
    let mut degree = vec![0usize; n + m];
    for &e in edges {
        degree[e / m] += 1;
        degree[n + e % m] += 1;
    }
    let mut alive = vec![true; edges.len()];
    let mut plan = vec![0.0; n * m];
    for _ in 0..edges.len() {
        let (idx, leaf) = edges.iter().enumerate().find_map(|(k, &e)| {
            if !alive[k] {
                return None;
            }
            let (r, c) = (e / m, n + e % m);
            if degree[r] == 1 {
                Some((k, r))
            } else if degree[c] == 1 {
                Some((k, c))
            } else {
                None
            }
        })?;
        let e = edges[idx];
        let (r, c) = (e / m, n + e % m);
        let other = if leaf == r { c } else { r };
        let value = residual[leaf];
        if value < -1e-12 {
            return None;
        }
        plan[e] = value.max(0.0);
        residual[other] -= value;
        residual[leaf] = 0.0;
        degree[r] -= 1;
        degree[c] -= 1;
        alive[idx] = false;
    }
    Some(plan)
}

const CHECKPOINT_FILE: &str = "checkpoint.txt";

fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}

/// Checkpoint layout:
///
/// ```text
/// # entrobound checkpoint v1
/// iteration <k>
/// eps_history <e_1> ... <e_k>
/// incumbent <n> <m> <p_11> <p_12> ...     (omitted before the first solve)
/// <grid text, see BreakpointGrid::to_text>
/// ```
fn save_checkpoint(dir: &Path, state: &State) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = String::from("# entrobound checkpoint v1\n");
    text.push_str(&format!("iteration {}\n", state.k));
    text.push_str("eps_history");
    for e in &state.eps_history {
        text.push_str(&format!(" {e:e}"));
    }
    text.push('\n');
    if let Some(p) = &state.incumbent {
        text.push_str(&format!("incumbent {} {}", p.n(), p.m()));
        for x in p.as_slice() {
            text.push_str(&format!(" {x:e}"));
        }
        text.push('\n');
    }
    text.push_str(&state.grid.to_text());
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    fs::write(&tmp, text)?;
    fs::rename(tmp, checkpoint_path(dir))?;
    Ok(())
}

fn load_checkpoint(dir: &Path) -> Result<State> {
    let text = fs::read_to_string(checkpoint_path(dir))?;
    let mut k = None;
    let mut eps_history = Vec::new();
    let mut incumbent = None;
    let mut grid_text = String::new();
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    for line in text.lines() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("iteration") => {
                k = Some(
                    words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| bad("bad iteration line"))?,
                )
            }
            Some("eps_history") => {
                eps_history = words
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad eps history"))?
            }
            Some("incumbent") => {
                let nums: Vec<f64> = words
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad incumbent"))?;
                if nums.len() < 2 {
                    return Err(bad("bad incumbent"));
                }
                let (n, m) = (nums[0] as usize, nums[1] as usize);
                incumbent = Some(JointDistribution::from_plan(n, m, nums[2..].to_vec())?);
            }
            _ => {
                grid_text.push_str(line);
                grid_text.push('\n');
            }
        }
    }
    Ok(State {
        grid: BreakpointGrid::from_text(&grid_text)?,
        k: k.ok_or_else(|| bad("missing iteration"))?,
        eps_history,
        incumbent,
    })
}
