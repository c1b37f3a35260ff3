mod common;

use entrobound::lp::{solve_lp, LpProblem, LpStatus, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Dense {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Dense {
    fn problem(&self) -> LpProblem {
        LpProblem::new(
            self.c.clone(),
            SparseMatrix::from_dense(&self.a),
            self.b.clone(),
            self.lower.clone(),
            self.upper.clone(),
        )
        .unwrap()
    }
}

/// Feasible by construction: `b = A x0` with `x0` inside the box.
fn random_lp(rng: &mut ChaCha8Rng) -> Dense {
    let rows = rng.gen_range(1..=3);
    let vars = rng.gen_range(rows + 1..=6);
    let a: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..vars).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let lower: Vec<f64> = (0..vars).map(|_| rng.gen_range(-1.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..2.0)).collect();
    let x0: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| rng.gen_range(*l..*u))
        .collect();
    let b = a
        .iter()
        .map(|row| row.iter().zip(&x0).map(|(a, x)| a * x).sum())
        .collect();
    let c = (0..vars).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Dense {
        a,
        b,
        c,
        lower,
        upper,
    }
}

/// Best basic solution: every row-sized column subset with a nonsingular
/// block, every lower/upper choice for the remaining columns.
fn vertex_min(lp: &Dense) -> Option<f64> {
    let rows = lp.a.len();
    let vars = lp.c.len();
    let mut best: Option<f64> = None;
    for basis in common::subsets(vars, rows) {
        let ab = DMatrix::from_fn(rows, rows, |r, k| lp.a[r][basis[k]]);
        let Some(inv) = ab.try_inverse() else {
            continue;
        };
        if inv.amax() > 1e9 {
            continue;
        }
        let nonbasic: Vec<usize> = (0..vars).filter(|j| !basis.contains(j)).collect();
        for mask in 0..1usize << nonbasic.len() {
            let mut x = vec![0.0; vars];
            for (k, &j) in nonbasic.iter().enumerate() {
                x[j] = if mask >> k & 1 == 1 {
                    lp.upper[j]
                } else {
                    lp.lower[j]
                };
            }
            let rhs = DVector::from_fn(rows, |r, _| {
                lp.b[r] - nonbasic.iter().map(|&j| lp.a[r][j] * x[j]).sum::<f64>()
            });
            let xb = &inv * rhs;
            let inside = basis
                .iter()
                .enumerate()
                .all(|(k, &j)| xb[k] >= lp.lower[j] - 1e-9 && xb[k] <= lp.upper[j] + 1e-9);
            if !inside {
                continue;
            }
            for (k, &j) in basis.iter().enumerate() {
                x[j] = xb[k];
            }
            let obj: f64 = x.iter().zip(&lp.c).map(|(x, c)| x * c).sum();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

#[test]
fn matches_vertex_enumeration_on_random_lps() {
    for seed in 0..300 {
        let lp = random_lp(&mut common::rng(seed));
        let sol = solve_lp(&lp.problem(), None).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "seed {seed}");
        let oracle = vertex_min(&lp).expect("feasible by construction");
        assert!(
            (sol.obj - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "seed {seed}: simplex {} vs vertices {oracle}",
            sol.obj
        );
    }
}

#[test]
fn strong_duality_and_reduced_cost_signs() {
    for seed in 0..300 {
        let lp = random_lp(&mut common::rng(seed));
        let p = lp.problem();
        let sol = solve_lp(&p, None).unwrap();
        assert!(
            (sol.obj - sol.dual_obj).abs() <= 1e-8 * (1.0 + sol.obj.abs()),
            "seed {seed}: primal {} dual {}",
            sol.obj,
            sol.dual_obj
        );
        // Primal feasibility.
        let ax = p.eq_matrix.mul_vec(&sol.x);
        for (r, (lhs, rhs)) in ax.iter().zip(&lp.b).enumerate() {
            assert!((lhs - rhs).abs() <= 1e-9, "seed {seed} row {r}");
        }
        // Dual feasibility from scratch: d = c - A'y.
        let aty = p.eq_matrix.tr_mul_vec(&sol.duals);
        for j in 0..lp.c.len() {
            let d = lp.c[j] - aty[j];
            assert!((d - sol.reduced_costs[j]).abs() <= 1e-9, "seed {seed}");
            let x = sol.x[j];
            if x > lp.lower[j] + 1e-9 && x < lp.upper[j] - 1e-9 {
                assert!(d.abs() <= 1e-8, "seed {seed}: interior var {j} has d={d}");
            } else if x <= lp.lower[j] + 1e-9 && lp.upper[j] > lp.lower[j] + 1e-9 {
                assert!(d >= -1e-8, "seed {seed}: var {j} at lower with d={d}");
            } else if x >= lp.upper[j] - 1e-9 && lp.upper[j] > lp.lower[j] + 1e-9 {
                assert!(d <= 1e-8, "seed {seed}: var {j} at upper with d={d}");
            }
        }
    }
}

#[test]
fn warm_start_reaches_the_cold_optimum() {
    for seed in 0..200 {
        let mut rng = common::rng(seed);
        let mut lp = random_lp(&mut rng);
        let first = solve_lp(&lp.problem(), None).unwrap();
        for c in &mut lp.c {
            *c += rng.gen_range(-0.3..0.3);
        }
        let j = rng.gen_range(0..lp.c.len());
        lp.upper[j] = lp.upper[j].max(lp.lower[j] + 0.1);
        let p = lp.problem();
        let cold = solve_lp(&p, None).unwrap();
        let warm = solve_lp(&p, Some(&first.basis)).unwrap();
        assert_eq!(cold.status, warm.status, "seed {seed}");
        assert!(
            (cold.obj - warm.obj).abs() <= 1e-9 * (1.0 + cold.obj.abs()),
            "seed {seed}: cold {} warm {}",
            cold.obj,
            warm.obj
        );
        // Re-solving from an optimal basis needs no pivots.
        let again = solve_lp(&p, Some(&warm.basis)).unwrap();
        assert_eq!(again.iterations, 0, "seed {seed}");
    }
}

#[test]
fn detects_infeasibility_and_unboundedness() {
    let a = vec![vec![1.0, 1.0]];
    let infeasible = LpProblem::new(
        vec![1.0, 1.0],
        SparseMatrix::from_dense(&a),
        vec![5.0],
        vec![0.0, 0.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    assert_eq!(
        solve_lp(&infeasible, None).unwrap().status,
        LpStatus::Infeasible
    );
    let unbounded = LpProblem::new(
        vec![-1.0, 0.0],
        SparseMatrix::from_dense(&a),
        vec![1.0],
        vec![0.0, f64::NEG_INFINITY],
        vec![f64::INFINITY, f64::INFINITY],
    )
    .unwrap();
    assert_eq!(
        solve_lp(&unbounded, None).unwrap().status,
        LpStatus::Unbounded
    );
}

#[test]
fn duplicated_rows_are_tolerated() {
    for seed in 0..100 {
        let mut lp = random_lp(&mut common::rng(seed));
        let base = solve_lp(&lp.problem(), None).unwrap().obj;
        let row = lp.a[0].clone();
        lp.a.push(row.iter().map(|v| 2.0 * v).collect());
        lp.b.push(2.0 * lp.b[0]);
        let sol = solve_lp(&lp.problem(), None).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "seed {seed}");
        assert!(
            (sol.obj - base).abs() <= 1e-8 * (1.0 + base.abs()),
            "seed {seed}"
        );
        assert!(!sol.redundant_rows.is_empty(), "seed {seed}");
    }
}
