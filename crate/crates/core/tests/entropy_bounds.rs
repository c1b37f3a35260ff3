mod common;

use entrobound::dist::{entropy, marginal_entropy, product_joint, JointDistribution};
use entrobound::maximize::{eta_bound, kkt_diagnostics, maximize_analytic, maximize_entropy};
use entrobound::minimize::{
    brute_force_min, default_iteration_cap, minimize_entropy, MinOptions, MinStatus,
};
use proptest::prelude::*;

fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2..=max_len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn minimum_matches_vertex_enumeration(mu in weights(4), nu in weights(3)) {
        let marg = common::marginals(mu, nu);
        let r = minimize_entropy(&marg, &MinOptions::default()).unwrap();
        prop_assert_eq!(r.status, MinStatus::Converged);
        let (best, _) = brute_force_min(&marg).unwrap();
        prop_assert!((r.h_min.0 - best.0).abs() <= 1e-3 * best.0);
        // Independent vertex list, not the spanning-tree enumerator.
        let oracle = common::transport_vertices(&marg)
            .iter()
            .map(|v| common::shannon(v))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((best.0 - oracle).abs() <= 1e-10);
    }

    #[test]
    fn every_iteration_is_sandwiched(mu in weights(4), nu in weights(4)) {
        let marg = common::marginals(mu, nu);
        let r = minimize_entropy(&marg, &MinOptions::with_eps(1e-3)).unwrap();
        for rec in &r.records {
            prop_assert!(rec.h_surrogate <= rec.h_true + 1e-10, "iteration {}", rec.k);
        }
        prop_assert!(r.iterations <= default_iteration_cap(marg.n(), marg.m(), 1e-3));
        prop_assert!(r.p_min.marginal_violation(&marg) <= 1e-9);
        prop_assert!((entropy(&r.p_min).0 - r.h_min.0).abs() <= 1e-12);
        // Lower and upper bounds on any plan with these marginals.
        let h_mu = marginal_entropy(marg.mu()).0;
        let h_nu = marginal_entropy(marg.nu()).0;
        prop_assert!(r.h_min.0 >= h_mu.max(h_nu) - 1e-9);
        prop_assert!(r.h_min.0 <= h_mu + h_nu + 1e-9);
    }

    #[test]
    fn minimum_is_invariant_under_transpose_and_permutation(
        mu in weights(3),
        nu in weights(4),
        shift in 0usize..4,
    ) {
        let marg = common::marginals(mu.clone(), nu.clone());
        let options = MinOptions::default();
        let base = minimize_entropy(&marg, &options).unwrap().h_min.0;
        let t = minimize_entropy(&marg.transposed(), &options).unwrap().h_min.0;
        let mut rotated = nu.clone();
        rotated.rotate_left(shift % nu.len());
        let p = minimize_entropy(&common::marginals(mu, rotated), &options).unwrap().h_min.0;
        prop_assert!((base - t).abs() <= 2e-4 * base);
        prop_assert!((base - p).abs() <= 2e-4 * base);
    }

    #[test]
    fn maximum_is_the_product_plan(mu in weights(20), nu in weights(20)) {
        let marg = common::marginals(mu, nu);
        let r = maximize_entropy(&marg, 1e-9).unwrap();
        let product = product_joint(&marg);
        let dev = r.p_max.as_slice().iter().zip(product.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(dev <= 1e-8);
        let sum = marginal_entropy(marg.mu()).0 + marginal_entropy(marg.nu()).0;
        prop_assert!((r.h_max.0 - sum).abs() <= 1e-8);
        let eta = eta_bound(&marg);
        prop_assert!(r.p_max.as_slice().iter().all(|&x| x > eta));
        prop_assert!(r.kkt_residual <= 1e-9);
        prop_assert!(r.reduced_hessian_cond >= 1.0);
    }
}

#[test]
fn analytic_and_newton_maximizers_agree() {
    for seed in 0..20 {
        let mut rng = common::rng(seed);
        let marg = common::marginals(
            common::dirichlet(&mut rng, 6),
            common::dirichlet(&mut rng, 9),
        );
        let a = maximize_analytic(&marg).unwrap();
        let b = maximize_entropy(&marg, 1e-9).unwrap();
        assert!((a.h_max.0 - b.h_max.0).abs() <= 1e-10, "seed {seed}");
        assert!((a.reduced_hessian_cond / b.reduced_hessian_cond - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn kkt_residual_detects_non_optimal_plans() {
    let marg = common::marginals(vec![0.5, 0.5], vec![0.5, 0.5]);
    let off = JointDistribution::from_rows(&[vec![0.3, 0.2], vec![0.2, 0.3]]).unwrap();
    let (residual, _) = kkt_diagnostics(&off, &marg).unwrap();
    // g = -1 - ln P; the interaction term of a 2x2 table is ln(3/2)/2.
    assert!((residual - 0.5 * 1.5f64.ln()).abs() <= 1e-12, "{residual}");
    let (at_product, cond) = kkt_diagnostics(&product_joint(&marg), &marg).unwrap();
    assert!(at_product <= 1e-15);
    assert!((cond - 1.0).abs() <= 1e-12);
}

#[test]
fn known_two_by_two_values() {
    let marg = common::marginals(vec![0.6, 0.4], vec![0.7, 0.3]);
    let min = minimize_entropy(&marg, &MinOptions::default()).unwrap();
    // Vertex [[0.6, 0], [0.1, 0.3]].
    let expected = -(0.6f64 * 0.6f64.ln() + 0.1 * 0.1f64.ln() + 0.3 * 0.3f64.ln());
    assert!((min.h_min.0 - expected).abs() <= 1e-12);
    let max = maximize_entropy(&marg, 1e-9).unwrap();
    let expected =
        -(0.6f64 * 0.6f64.ln() + 0.4 * 0.4f64.ln()) - (0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
    assert!((max.h_max.0 - expected).abs() <= 1e-12);
}
