//! Probability data model and exact entropy / mutual-information arithmetic.
//!
//! All entropies are natural-log entropies measured in nat.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance for mass and marginal checks.
pub const TOL_FEAS: f64 = 1e-9;
/// Tolerance for derived inequalities (MI bounds, ratio range).
pub const TOL_NUM: f64 = 1e-8;
/// Guard on the denominator of relative quantities.
pub const TOL_DENOM: f64 = 1e-10;

/// Inputs below this evaluate to exactly zero in [`h`], avoiding `ln` underflow.
const H_CUTOFF: f64 = 1e-300;

/// `-x ln x` with the `0 ln 0 = 0` convention, for already-validated input.
///
/// Values below `1e-300` (including round-off negatives from the solvers)
/// evaluate to zero.
#[inline]
pub fn h(x: f64) -> f64 {
    if x < H_CUTOFF {
        0.0
    } else {
        -x * x.ln()
    }
}

/// Derivative of [`h`] on the open half-line: `-1 - ln x`.
#[inline]
pub fn h_prime(x: f64) -> f64 {
    -1.0 - x.ln()
}

/// Checked version of [`h`]: rejects negative and non-finite input.
pub fn h_point(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("h is defined on [0, inf), got {x}")));
    }
    Ok(h(x))
}

/// An entropy in nat.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntropyValue(pub f64);

impl EntropyValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for EntropyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} nat", self.0)
    }
}

impl From<EntropyValue> for f64 {
    fn from(v: EntropyValue) -> f64 {
        v.0
    }
}

fn check_probability_vector(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidDistribution(format!("{name} is empty")));
    }
    if let Some((i, x)) = w
        .iter()
        .enumerate()
        .find(|(_, x)| !(x.is_finite() && **x > 0.0))
    {
        return Err(Error::InvalidDistribution(format!(
            "{name}[{i}] = {x} is not strictly positive"
        )));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > TOL_FEAS {
        return Err(Error::InvalidDistribution(format!(
            "{name} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Fixed row marginal `mu` (length n) and column marginal `nu` (length m).
///
/// Both are strictly positive and sum to one within [`TOL_FEAS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPair {
    mu: Vec<f64>,
    nu: Vec<f64>,
}

impl MarginalPair {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        check_probability_vector("mu", &mu)?;
        check_probability_vector("nu", &nu)?;
        Ok(Self { mu, nu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn m(&self) -> usize {
        self.nu.len()
    }

    /// Swap the roles of rows and columns.
    pub fn transposed(&self) -> Self {
        Self {
            mu: self.nu.clone(),
            nu: self.mu.clone(),
        }
    }

    /// A single row or a single column: the feasible set is one point.
    pub fn is_trivial(&self) -> bool {
        self.n() == 1 || self.m() == 1
    }

    /// Upper bound `min(mu_i, nu_j)` on cell `(i, j)` of any feasible plan.
    pub fn cell_cap(&self, i: usize, j: usize) -> f64 {
        self.mu[i].min(self.nu[j])
    }
}

/// Nonnegative `n x m` matrix with unit total mass, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    n: usize,
    m: usize,
    p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(n: usize, m: usize, p: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidDistribution("empty matrix".into()));
        }
        if p.len() != n * m {
            return Err(Error::InvalidDistribution(format!(
                "expected {} entries for a {n}x{m} matrix, got {}",
                n * m,
                p.len()
            )));
        }
        if let Some((k, x)) = p
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x >= 0.0))
        {
            return Err(Error::InvalidDistribution(format!(
                "entry ({}, {}) = {x} is negative or not finite",
                k / m,
                k % m
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > TOL_FEAS {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total}, expected 1"
            )));
        }
        Ok(Self { n, m, p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidDistribution("ragged rows".into()));
        }
        Self::new(n, m, rows.concat())
    }

    /// Build from a solver plan, zeroing round-off negatives down to `-TOL_FEAS`.
    pub(crate) fn from_plan(n: usize, m: usize, mut p: Vec<f64>) -> Result<Self> {
        for x in &mut p {
            if *x < 0.0 && *x >= -TOL_FEAS {
                *x = 0.0;
            }
        }
        Self::new(n, m, p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.m + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.m..(i + 1) * self.m]
    }

    pub fn transposed(&self) -> Self {
        let mut t = vec![0.0; self.p.len()];
        for i in 0..self.n {
            for j in 0..self.m {
                t[j * self.n + i] = self.get(i, j);
            }
        }
        Self {
            n: self.m,
            m: self.n,
            p: t,
        }
    }

    /// Row sums and column sums, unvalidated.
    pub fn row_col_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0; self.n];
        let mut cols = vec![0.0; self.m];
        for i in 0..self.n {
            for j in 0..self.m {
                let x = self.get(i, j);
                rows[i] += x;
                cols[j] += x;
            }
        }
        (rows, cols)
    }

    /// Largest deviation of the row/column sums from `marg`.
    pub fn marginal_violation(&self, marg: &MarginalPair) -> f64 {
        if self.n != marg.n() || self.m != marg.m() {
            return f64::INFINITY;
        }
        let (rows, cols) = self.row_col_sums();
        rows.iter()
            .zip(marg.mu())
            .chain(cols.iter().zip(marg.nu()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `H(P) = sum_ij h(P_ij)`.
pub fn entropy(p: &JointDistribution) -> EntropyValue {
    EntropyValue(p.as_slice().iter().map(|&x| h(x)).sum())
}

/// Entropy of a single probability vector.
pub fn marginal_entropy(w: &[f64]) -> EntropyValue {
    EntropyValue(w.iter().map(|&x| h(x)).sum())
}

/// `MI(P) = H(mu) + H(nu) - H(P)`. Fails if `p` does not have marginals `marg`.
pub fn mutual_information(p: &JointDistribution, marg: &MarginalPair) -> Result<f64> {
    let violation = p.marginal_violation(marg);
    if violation > TOL_FEAS {
        return Err(Error::Inconsistent(format!(
            "plan marginals deviate from the given marginals by {violation:e}"
        )));
    }
    Ok(marginal_entropy(marg.mu()).0 + marginal_entropy(marg.nu()).0 - entropy(p).0)
}

/// Row and column sums of `p` as a validated marginal pair.
///
/// Rows or columns with zero mass make this fail, since marginals must be
/// strictly positive; strip them first (see `ingest::reduce`).
pub fn marginals_of(p: &JointDistribution) -> Result<MarginalPair> {
    let (rows, cols) = p.row_col_sums();
    MarginalPair::new(rows, cols)
}

/// The independent coupling `P_ij = mu_i * nu_j`.
pub fn product_joint(marg: &MarginalPair) -> JointDistribution {
    let p = marg
        .mu()
        .iter()
        .flat_map(|&a| marg.nu().iter().map(move |&b| a * b))
        .collect();
    JointDistribution {
        n: marg.n(),
        m: marg.m(),
        p,
    }
}

/// Scaled MI ratio `(H(data) - H_max) / (H_min - H_max)`.
///
/// 0 when the data is the maximum-entropy plan, 1 when it is a minimum-entropy
/// plan. The range check of the result is left to the caller.
pub fn mi_ratio(h_data: EntropyValue, h_min: EntropyValue, h_max: EntropyValue) -> Result<f64> {
    let denom = h_min.0 - h_max.0;
    if denom.abs() <= TOL_DENOM {
        return Err(Error::TrivialInstance { range: denom.abs() });
    }
    Ok((h_data.0 - h_max.0) / denom)
}
