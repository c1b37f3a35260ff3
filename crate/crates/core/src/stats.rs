//! Kendall rank correlation.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    /// Tie-corrected tau-b.
    pub tau: f64,
    /// Two-sided p-value from the normal approximation with tie-corrected variance.
    pub p_value: f64,
}

/// Kendall's tau-b of paired samples.
///
/// Fails when the lengths differ, fewer than two pairs are given, a value is
/// NaN, or either sample is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "samples have different lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in sample".into()));
    }

    let mut s = 0i64;
    let (mut tied_x, mut tied_y) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap() as i64;
            let dy = y[i].partial_cmp(&y[j]).unwrap() as i64;
            s += dx * dy;
            tied_x += u64::from(dx == 0);
            tied_y += u64::from(dy == 0);
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    if tied_x == pairs || tied_y == pairs {
        return Err(Error::UndefinedCorrelation("a sample is constant".into()));
    }
    let tau = s as f64 / (((pairs - tied_x) as f64) * ((pairs - tied_y) as f64)).sqrt();

    let (tx, ty) = (tie_groups(x), tie_groups(y));
    let nf = n as f64;
    let sum = |ts: &[f64], f: &dyn Fn(f64) -> f64| ts.iter().map(|&t| f(t)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&tx, &|t| t * (t - 1.0)) * sum(&ty, &|t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        sum(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&ty, &|t| t * (t - 1.0) * (t - 2.0))
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p_value = if var > 0.0 {
        let z = s as f64 / var.sqrt();
        erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok(KendallTau {
        tau: tau.clamp(-1.0, 1.0),
        p_value,
    })
}

/// Sizes of groups of equal values, singletons omitted.
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut groups = Vec::new();
    let mut run = 1usize;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                groups.push(run as f64);
            }
            run = 1;
        }
    }
    if run > 1 {
        groups.push(run as f64);
    }
    groups
}
