//! Maximum entropy under fixed marginals.
//!
//! The equality constraints are eliminated with an orthonormal null-space
//! basis `Z = Helmert_n ⊗ Helmert_m`, and damped Newton runs on
//! `w -> H(P0 + Z w)`. Steps are cut so every entry keeps at least 1% of
//! the current minimum entry.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::dist::{
    entropy, product_joint, EntropyValue, JointDistribution, MarginalPair, TOL_FEAS,
};
use crate::error::{Error, Result};

pub const DEFAULT_KKT_TOL: f64 = 1e-9;
const MAX_NEWTON: usize = 100;
const BOUNDARY_FRACTION: f64 = 0.01;
const START_DISPLACEMENT: f64 = 0.01;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct MaxResult {
    pub p_max: JointDistribution,
    pub h_max: EntropyValue,
    pub kkt_residual: f64,
    pub reduced_hessian_cond: f64,
    pub newton_iterations: usize,
    /// Certified lower bound on every entry of `p_max`.
    pub eta: f64,
}

/// The product distribution `mu nu^T`.
pub fn analytic_max(marg: &MarginalPair) -> JointDistribution {
    product_joint(marg)
}

/// `0.5 * min(mu) * min(nu)`; the maximizer is the product plan, whose
/// smallest entry is `min(mu) * min(nu)`.
pub fn eta_bound(marg: &MarginalPair) -> f64 {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    0.5 * min(marg.mu()) * min(marg.nu())
}

/// `dH/dP_ij = -1 - ln P_ij`.
pub fn entropy_gradient(p: &JointDistribution) -> Result<Vec<f64>> {
    p.as_slice()
        .iter()
        .map(|&x| {
            if x > 0.0 {
                Ok(-1.0 - x.ln())
            } else {
                Err(Error::Domain(format!(
                    "gradient needs positive entries, got {x}"
                )))
            }
        })
        .collect()
}

/// Orthonormal `k x (k-1)` basis of the complement of the ones vector.
fn helmert(k: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(k, k.saturating_sub(1));
    for c in 0..k.saturating_sub(1) {
        let len = (c + 1) as f64;
        let scale = 1.0 / (len * (len + 1.0)).sqrt();
        for r in 0..=c {
            h[(r, c)] = scale;
        }
        h[(c + 1, c)] = -len * scale;
    }
    h
}

/// Null-space basis of the transportation constraints, rows indexed by
/// row-major cell.
fn null_space(n: usize, m: usize) -> DMatrix<f64> {
    helmert(n).kronecker(&helmert(m))
}

/// Residual of the best least-squares fit `g_ij ~ alpha_i + beta_j`.
fn anova_residual(g: &[f64], n: usize, m: usize) -> f64 {
    let row_mean: Vec<f64> = (0..n)
        .map(|i| g[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let col_mean: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| g[i * m + j]).sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            let r = g[i * m + j] - row_mean[i] - col_mean[j] + grand;
            worst = worst.max(r.abs());
        }
    }
    worst
}

fn reduced_hessian(z: &DMatrix<f64>, p: &[f64]) -> DMatrix<f64> {
    let mut scaled = z.clone();
    for (r, &x) in p.iter().enumerate() {
        scaled.row_mut(r).scale_mut(1.0 / x);
    }
    z.transpose() * scaled
}

fn condition_number(hess: &DMatrix<f64>) -> f64 {
    if hess.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(hess.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// KKT residual and reduced-Hessian condition number at a positive feasible plan.
pub fn kkt_diagnostics(p: &JointDistribution, marg: &MarginalPair) -> Result<(f64, f64)> {
    let (n, m) = (marg.n(), marg.m());
    if (p.n(), p.m()) != (n, m) {
        return Err(Error::Domain(format!(
            "plan is {}x{}, marginals are {n}x{m}",
            p.n(),
            p.m()
        )));
    }
    let g = entropy_gradient(p)?;
    let residual = anova_residual(&g, n, m);
    let z = null_space(n, m);
    Ok((
        residual,
        condition_number(&reduced_hessian(&z, p.as_slice())),
    ))
}

fn finish(p: JointDistribution, marg: &MarginalPair, iterations: usize) -> Result<MaxResult> {
    let (kkt_residual, reduced_hessian_cond) = kkt_diagnostics(&p, marg)?;
    Ok(MaxResult {
        h_max: entropy(&p),
        p_max: p,
        kkt_residual,
        reduced_hessian_cond,
        newton_iterations: iterations,
        eta: eta_bound(marg),
    })
}

/// Closed-form maximizer with the same diagnostics as the Newton path.
pub fn maximize_analytic(marg: &MarginalPair) -> Result<MaxResult> {
    finish(analytic_max(marg), marg, 0)
}

/// Numerical maximizer; fails with [`Error::NewtonFailure`] if the KKT
/// residual does not reach `kkt_tol`.
pub fn maximize_entropy(marg: &MarginalPair, kkt_tol: f64) -> Result<MaxResult> {
    if kkt_tol.is_nan() || kkt_tol <= 0.0 {
        return Err(Error::Domain(format!(
            "kkt_tol must be positive, got {kkt_tol}"
        )));
    }
    let (n, m) = (marg.n(), marg.m());
    if marg.is_trivial() {
        // a single row or column is the whole feasible set
        return finish(analytic_max(marg), marg, 0);
    }
    let z = null_space(n, m);
    let k = z.ncols();

    let base = analytic_max(marg).into_vec();
    let floor = base.iter().copied().fold(f64::INFINITY, f64::min);
    let d = &z * DVector::from_element(k, 1.0);
    let d_max = d.amax();
    let mut p: Vec<f64> = base
        .iter()
        .zip(d.iter())
        .map(|(b, di)| b + START_DISPLACEMENT * floor * di / d_max)
        .collect();

    let objective = |p: &[f64]| -> f64 { p.iter().map(|&x| -x * x.ln()).sum() };
    let mut residual = f64::INFINITY;
    for iter in 0..=MAX_NEWTON {
        let g: Vec<f64> = p.iter().map(|&x| -1.0 - x.ln()).collect();
        residual = anova_residual(&g, n, m);
        if residual <= kkt_tol {
            let plan = JointDistribution::new(n, m, p)?;
            if plan.marginal_violation(marg) > TOL_FEAS {
                return Err(Error::Internal(
                    "Newton iterate drifted off the polytope".into(),
                ));
            }
            return finish(plan, marg, iter);
        }
        if iter == MAX_NEWTON {
            break;
        }

        let grad_w = z.transpose() * DVector::from_column_slice(&g);
        let hess = reduced_hessian(&z, &p);
        let step_w = hess
            .cholesky()
            .ok_or_else(|| Error::Internal("reduced Hessian is not positive definite".into()))?
            .solve(&grad_w);
        let step = &z * &step_w;
        let decrement = grad_w.dot(&step_w);

        let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
        let keep = BOUNDARY_FRACTION * p_min;
        let mut t: f64 = 1.0;
        for (x, s) in p.iter().zip(step.iter()) {
            if *s < 0.0 {
                t = t.min((x - keep) / -s);
            }
        }
        // tiny decrements are below the resolution of H itself
        if decrement > 1e-14 {
            let h0 = objective(&p);
            while t > 1e-12 {
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + t * s).collect();
                if objective(&trial) >= h0 + ARMIJO * t * decrement {
                    break;
                }
                t *= 0.5;
            }
        }
        for (x, s) in p.iter_mut().zip(step.iter()) {
            *x += t * s;
        }
    }
    Err(Error::NewtonFailure {
        iterations: MAX_NEWTON,
        residual,
        best: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::marginal_entropy;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn marg(mu: &[f64], nu: &[f64]) -> MarginalPair {
        MarginalPair::new(mu.to_vec(), nu.to_vec()).unwrap()
    }

    #[test]
    fn helmert_is_orthonormal_and_annihilates_ones() {
        for k in 1..6 {
            let h = helmert(k);
            let gram = h.transpose() * &h;
            assert!((gram - DMatrix::identity(k - 1, k - 1)).amax() < 1e-15);
            for c in 0..k - 1 {
                assert!(h.column(c).sum().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_two_by_two() {
        let mu = marg(&[0.5, 0.5], &[0.5, 0.5]);
        let r = maximize_entropy(&mu, DEFAULT_KKT_TOL).unwrap();
        for &x in r.p_max.as_slice() {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.h_max.0, 4f64.ln(), epsilon = 1e-12);
        assert!(r.newton_iterations > 0);
        assert_abs_diff_eq!(r.reduced_hessian_cond, 1.0, epsilon = 1e-12);
        assert_eq!(r.eta, 0.125);
    }

    #[test]
    fn asymmetric_two_by_two() {
        let mu = marg(&[0.6, 0.4], &[0.7, 0.3]);
        let r = maximize_entropy(&mu, DEFAULT_KKT_TOL).unwrap();
        for (x, e) in r.p_max.as_slice().iter().zip([0.42, 0.18, 0.28, 0.12]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-10);
        }
        // mpmath: 1.28387596906414987
        assert_abs_diff_eq!(r.h_max.0, 1.283_875_969_064_15, epsilon = 1e-10);
        assert!(r.kkt_residual <= DEFAULT_KKT_TOL);
        assert_abs_diff_eq!(eta_bound(&mu), 0.06, epsilon = 1e-15);
    }

    #[test]
    fn singleton_instances() {
        let nu = [0.2, 0.3, 0.5];
        let r = maximize_entropy(&marg(&[1.0], &nu), DEFAULT_KKT_TOL).unwrap();
        assert_eq!(r.p_max.as_slice(), &nu);
        assert_eq!(r.newton_iterations, 0);
        assert_abs_diff_eq!(r.h_max.0, marginal_entropy(&nu).0, epsilon = 1e-15);
        assert_eq!(r.reduced_hessian_cond, 1.0);

        let one = marg(&[1.0], &[1.0]);
        assert_eq!(analytic_max(&one).as_slice(), &[1.0]);
        assert_eq!(entropy(&analytic_max(&one)).0, 0.0);
        assert_eq!(eta_bound(&one), 0.5);
    }

    #[test]
    fn analytic_value() {
        let mu = marg(&[0.6, 0.4], &[0.7, 0.3]);
        let direct: f64 = [0.42f64, 0.18, 0.28, 0.12]
            .iter()
            .map(|&x| -x * x.ln())
            .sum();
        assert_abs_diff_eq!(entropy(&analytic_max(&mu)).0, direct, epsilon = 1e-15);
        let r = maximize_analytic(&mu).unwrap();
        assert!(r.kkt_residual <= 1e-15);
    }

    #[test]
    fn diagnostics_detect_perturbation() {
        let mu = marg(&[0.2, 0.3, 0.5], &[0.4, 0.35, 0.25]);
        let p = analytic_max(&mu);
        let (res, cond) = kkt_diagnostics(&p, &mu).unwrap();
        assert!(res <= 1e-10);
        assert!(cond >= 1.0);

        let z = null_space(3, 3);
        let dir = z.column(0);
        let shifted: Vec<f64> = p
            .as_slice()
            .iter()
            .zip(dir.iter())
            .map(|(x, d)| x + 1e-3 * d / dir.amax())
            .collect();
        let q = JointDistribution::new(3, 3, shifted).unwrap();
        let (res, _) = kkt_diagnostics(&q, &mu).unwrap();
        assert!(res > 1e-4, "residual {res}");

        let zero = JointDistribution::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(matches!(
            kkt_diagnostics(&zero, &marg(&[0.5, 0.5], &[0.5, 0.5])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(maximize_entropy(&marg(&[0.5, 0.5], &[0.5, 0.5]), 0.0).is_err());
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn newton_matches_product((mu, nu) in (1usize..8, 1usize..8)
            .prop_flat_map(|(n, m)| (simplex(n), simplex(m))))
        {
            let mp = MarginalPair::new(mu.clone(), nu.clone()).unwrap();
            let r = maximize_entropy(&mp, DEFAULT_KKT_TOL).unwrap();
            let prod = analytic_max(&mp);
            for (a, b) in r.p_max.as_slice().iter().zip(prod.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-8);
                prop_assert!(*a > r.eta);
            }
            let bound = marginal_entropy(&mu).0 + marginal_entropy(&nu).0;
            prop_assert!((r.h_max.0 - bound).abs() <= 1e-8);
        }

        #[test]
        fn gradient_matches_finite_differences(
            raw in prop::collection::vec(0.05f64..1.0, 9),
            cell in 0usize..9,
        ) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let g = entropy_gradient(&JointDistribution::new(3, 3, p.clone()).unwrap()).unwrap();
            let f = |x: &[f64]| -> f64 { x.iter().map(|&v| -v * v.ln()).sum() };
            let step = 1e-6;
            let mut hi = p.clone();
            hi[cell] += step;
            let mut lo = p.clone();
            lo[cell] -= step;
            let fd = (f(&hi) - f(&lo)) / (2.0 * step);
            prop_assert!((fd - g[cell]).abs() <= 1e-6 * g[cell].abs().max(1.0));
        }
    }
}
