//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use entrobound::dist::{JointDistribution, MarginalPair};
use entrobound::lp::{solve_lp, LpProblem, LpStatus, SparseMatrix};
use entrobound::pwl::BreakpointGrid;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform(0.05, 1) weights, normalized.
pub fn positive_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Flat Dirichlet sample: normalized Exp(1) draws.
pub fn dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn marginals(mu: Vec<f64>, nu: Vec<f64>) -> MarginalPair {
    MarginalPair::new(mu, nu).unwrap()
}

/// Vertices of the transportation polytope, found by solving the marginal
/// equations on every `(n + m - 1)`-subset of cells with a full-rank system
/// and keeping the nonnegative solutions.
pub fn transport_vertices(marg: &MarginalPair) -> Vec<Vec<f64>> {
    let (n, m) = (marg.n(), marg.m());
    let cells = n * m;
    let k = n + m - 1;
    let rhs = DVector::from_iterator(n + m, marg.mu().iter().chain(marg.nu()).copied());
    let mut out: Vec<Vec<f64>> = Vec::new();
    for subset in subsets(cells, k) {
        let a = DMatrix::from_fn(n + m, k, |r, c| {
            let cell = subset[c];
            f64::from(u8::from(r == cell / m || r == n + cell % m))
        });
        let svd = a.clone().svd(true, true);
        if svd.rank(1e-9) < k {
            continue;
        }
        let Ok(x) = svd.solve(&rhs, 1e-12) else {
            continue;
        };
        if (&a * &x - &rhs).amax() > 1e-10 || x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut plan = vec![0.0; cells];
        for (c, &cell) in subset.iter().enumerate() {
            plan[cell] = x[c].max(0.0);
        }
        if !out
            .iter()
            .any(|p| p.iter().zip(&plan).all(|(a, b)| (a - b).abs() < 1e-12))
        {
            out.push(plan);
        }
    }
    out
}

pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn shannon(plan: &[f64]) -> f64 {
    plan.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

pub fn surrogate(grid: &BreakpointGrid, plan: &[f64]) -> f64 {
    let m = grid.m();
    plan.iter()
        .enumerate()
        .map(|(c, &x)| grid.eval(c / m, c % m, x))
        .sum()
}

/// Minimum of the surrogate by enumerating one linear piece per cell and
/// solving the resulting LP for each assignment.
pub fn window_enumeration(marg: &MarginalPair, grid: &BreakpointGrid) -> f64 {
    let (n, m) = (marg.n(), marg.m());
    let cells = n * m;
    // Feasible pieces per cell: (lo, hi, value at lo, slope).
    let pieces: Vec<Vec<(f64, f64, f64, f64)>> = (0..cells)
        .map(|c| {
            let (i, j) = (c / m, c % m);
            let cap = marg.cell_cap(i, j);
            let pts = grid.cell(i, j);
            let vals = grid.cell_values(i, j);
            (0..pts.len() - 1)
                .filter(|&r| pts[r] < cap)
                .map(|r| {
                    let slope = (vals[r + 1] - vals[r]) / (pts[r + 1] - pts[r]);
                    (pts[r], pts[r + 1].min(cap), vals[r], slope)
                })
                .collect()
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut choice = vec![0usize; cells];
    loop {
        let lo: Vec<f64> = (0..cells).map(|c| pieces[c][choice[c]].0).collect();
        let hi: Vec<f64> = (0..cells).map(|c| pieces[c][choice[c]].1).collect();
        if box_may_be_feasible(marg, &lo, &hi) {
            let columns: Vec<Vec<(usize, f64)>> = (0..cells)
                .map(|c| vec![(c / m, 1.0), (n + c % m, 1.0)])
                .collect();
            let objective: Vec<f64> = (0..cells).map(|c| pieces[c][choice[c]].3).collect();
            let rhs: Vec<f64> = marg.mu().iter().chain(marg.nu()).copied().collect();
            let lp = LpProblem::new(
                objective,
                SparseMatrix::from_columns(n + m, &columns),
                rhs,
                lo.clone(),
                hi.clone(),
            )
            .unwrap();
            let sol = solve_lp(&lp, None).unwrap();
            if sol.status == LpStatus::Optimal {
                let value: f64 = (0..cells)
                    .map(|c| {
                        let (l, _, v, s) = pieces[c][choice[c]];
                        v + s * (sol.x[c] - l)
                    })
                    .sum();
                best = best.min(value);
            }
        }
        // Odometer step.
        let mut c = 0;
        loop {
            if c == cells {
                return best;
            }
            choice[c] += 1;
            if choice[c] < pieces[c].len() {
                break;
            }
            choice[c] = 0;
            c += 1;
        }
    }
}

fn box_may_be_feasible(marg: &MarginalPair, lo: &[f64], hi: &[f64]) -> bool {
    let (n, m) = (marg.n(), marg.m());
    let tol = 1e-12;
    (0..n).all(|i| {
        let l: f64 = (0..m).map(|j| lo[i * m + j]).sum();
        let h: f64 = (0..m).map(|j| hi[i * m + j]).sum();
        l <= marg.mu()[i] + tol && marg.mu()[i] <= h + tol
    }) && (0..m).all(|j| {
        let l: f64 = (0..n).map(|i| lo[i * m + j]).sum();
        let h: f64 = (0..n).map(|i| hi[i * m + j]).sum();
        l <= marg.nu()[j] + tol && marg.nu()[j] <= h + tol
    })
}

/// Grid with the standard `{0, cap, 1}` points plus, in some cells, one extra
/// point drawn from `(0, 1)`; at most four breakpoints per cell.
pub fn random_grid(rng: &mut ChaCha8Rng, marg: &MarginalPair) -> BreakpointGrid {
    let (n, m) = (marg.n(), marg.m());
    let points = (0..n * m)
        .map(|c| {
            let cap = marg.cell_cap(c / m, c % m);
            let mut pts = vec![0.0, cap, 1.0];
            if rng.gen_bool(0.7) {
                let x = if rng.gen_bool(0.8) {
                    rng.gen_range(0.0..cap)
                } else {
                    rng.gen_range(cap..1.0)
                };
                if pts.iter().all(|&p| (p - x).abs() > 1e-6) {
                    pts.push(x);
                }
            }
            pts.sort_by(f64::total_cmp);
            pts
        })
        .collect();
    BreakpointGrid::from_points(n, m, points).unwrap()
}

pub fn plan_of(marg: &MarginalPair, plan: Vec<f64>) -> JointDistribution {
    JointDistribution::new(marg.n(), marg.m(), plan).unwrap()
}
