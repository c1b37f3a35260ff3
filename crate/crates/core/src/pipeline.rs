//! Batch runs over contingency tables: per-instance bounds and ratio,
//! report files, summary statistics and the ratio heatmap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{entropy, mi_ratio, mutual_information, EntropyValue};
use crate::error::{Error, Result};
use crate::ingest::{reduce, table_file_name, ContingencyTable, PairId};
use crate::maximize::{maximize_analytic, maximize_entropy, DEFAULT_KKT_TOL};
use crate::minimize::{
    minimize_entropy, Checkpointing, MinOptions, MinStatus, EPS_DEFAULT, EPS_FAST,
};
use crate::stats::{kendall_tau, KendallTau};

/// Report schema version, written in the report header.
pub const REPORT_VERSION: u32 = 1;
/// Largest ratio excursion outside `[0, 1]` that is clamped; beyond it the
/// instance fails.
pub const RHO_TOL: f64 = 1e-6;

const COLUMNS: [&str; 13] = [
    "k",
    "l",
    "trivial",
    "status",
    "h_data",
    "h_min",
    "h_max",
    "mi_data",
    "rho",
    "min_iterations",
    "bnb_nodes",
    "newton_iterations",
    "eps_final",
];

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub min: MinOptions,
    pub kkt_tol: f64,
    /// Use the closed-form maximizer instead of Newton.
    pub analytic_max: bool,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Per-instance checkpoints go to `<dir>/pair_<k>_<l>`.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Add a `wall_time` column. Off by default so reports are reproducible.
    pub record_wall_time: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            min: MinOptions::default(),
            kkt_tol: DEFAULT_KKT_TOL,
            analytic_max: false,
            workers: 1,
            checkpoint_dir: None,
            checkpoint_every: 10,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Trivial,
    Converged,
    IterationLimit,
    Stalled,
    NodeLimit,
    TimeLimit,
    Failed,
}

impl InstanceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Trivial => "trivial",
            Self::Converged => "converged",
            Self::IterationLimit => "iteration_limit",
            Self::Stalled => "stalled",
            Self::NodeLimit => "node_limit",
            Self::TimeLimit => "time_limit",
            Self::Failed => "failed",
        }
    }
}

impl From<MinStatus> for InstanceStatus {
    fn from(s: MinStatus) -> Self {
        match s {
            MinStatus::Converged => Self::Converged,
            MinStatus::IterationLimit => Self::IterationLimit,
            MinStatus::Stalled => Self::Stalled,
            MinStatus::NodeLimit => Self::NodeLimit,
            MinStatus::TimeLimit => Self::TimeLimit,
        }
    }
}

impl FromStr for InstanceStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::Trivial,
            Self::Converged,
            Self::IterationLimit,
            Self::Stalled,
            Self::NodeLimit,
            Self::TimeLimit,
            Self::Failed,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| Error::Domain(format!("unknown status {s:?}")))
    }
}

/// One row of the report.
///
/// `h_min` and `h_max` are the bounds clipped by the data plan's own entropy
/// (the data plan is feasible). Failed instances carry NaN values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub pair: PairId,
    pub trivial: bool,
    pub status: InstanceStatus,
    pub h_data: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub mi_data: f64,
    /// Present iff the instance is non-trivial and succeeded.
    pub rho: Option<f64>,
    pub min_iterations: usize,
    pub bnb_nodes: usize,
    pub newton_iterations: usize,
    pub eps_final: f64,
    /// Seconds; only filled when requested.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub pair: PairId,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_instances: usize,
    pub n_trivial: usize,
    /// MI against ratio over all instances, trivial ones entering with ratio 0.
    pub tau_all: Option<KendallTau>,
    pub tau_nontrivial: Option<KendallTau>,
    pub failures: Vec<Failure>,
}

/// Solve every table and summarize. Reports come back in pair order
/// whatever the worker count; per-instance failures never abort the batch.
pub fn run_batch(
    tables: &[ContingencyTable],
    config: &BatchConfig,
) -> Result<(Vec<InstanceReport>, BatchSummary)> {
    if tables.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    let mut order: Vec<&ContingencyTable> = tables.iter().collect();
    order.sort_by_key(|t| t.pair());

    let work = || -> Vec<(InstanceReport, Option<String>)> {
        order.par_iter().map(|t| run_instance(t, config)).collect()
    };
    let results = if config.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(work)
    };

    let mut reports = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (report, failure) in results {
        if let Some(message) = failure {
            warn!("pair {:?}: {message}", report.pair);
            failures.push(Failure {
                pair: report.pair,
                message,
            });
        }
        reports.push(report);
    }
    let summary = summarize(&reports, failures);
    Ok((reports, summary))
}

/// Recompute the summary statistics of finished reports.
pub fn summarize(reports: &[InstanceReport], failures: Vec<Failure>) -> BatchSummary {
    let tau = |pairs: Vec<(f64, f64)>| -> Option<KendallTau> {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        kendall_tau(&x, &y).ok()
    };
    let usable = |r: &&InstanceReport| r.status != InstanceStatus::Failed && r.mi_data.is_finite();
    let all = reports
        .iter()
        .filter(usable)
        .filter_map(|r| match (r.trivial, r.rho) {
            (true, _) => Some((r.mi_data, 0.0)),
            (false, Some(rho)) => Some((r.mi_data, rho)),
            (false, None) => None,
        })
        .collect();
    let nontrivial = reports
        .iter()
        .filter(usable)
        .filter(|r| !r.trivial)
        .filter_map(|r| r.rho.map(|rho| (r.mi_data, rho)))
        .collect();
    BatchSummary {
        n_instances: reports.len(),
        n_trivial: reports.iter().filter(|r| r.trivial).count(),
        tau_all: tau(all),
        tau_nontrivial: tau(nontrivial),
        failures,
    }
}

fn run_instance(
    table: &ContingencyTable,
    config: &BatchConfig,
) -> (InstanceReport, Option<String>) {
    let start = Instant::now();
    let pair = table.pair();
    let mut result = solve_instance(table, config).unwrap_or_else(|e| {
        let failed = InstanceReport {
            pair,
            trivial: false,
            status: InstanceStatus::Failed,
            h_data: f64::NAN,
            h_min: f64::NAN,
            h_max: f64::NAN,
            mi_data: f64::NAN,
            rho: None,
            min_iterations: 0,
            bnb_nodes: 0,
            newton_iterations: 0,
            eps_final: f64::NAN,
            wall_time: None,
        };
        (failed, Some(e.to_string()))
    });
    if config.record_wall_time {
        result.0.wall_time = Some(start.elapsed().as_secs_f64());
    }
    result
}

/// Bounds and ratio for one table. A minimization that stops early is
/// reported with its status and also counted as a failure.
pub fn solve_instance(
    table: &ContingencyTable,
    config: &BatchConfig,
) -> Result<(InstanceReport, Option<String>)> {
    let red = reduce(table)?;
    let h_data = entropy(&red.data_joint).0;
    let mi_data = mutual_information(&red.data_joint, &red.marg)?;
    let mut report = InstanceReport {
        pair: red.pair,
        trivial: red.trivial,
        status: InstanceStatus::Trivial,
        h_data,
        h_min: h_data,
        h_max: h_data,
        mi_data,
        rho: None,
        min_iterations: 0,
        bnb_nodes: 0,
        newton_iterations: 0,
        eps_final: 0.0,
        wall_time: None,
    };
    if red.trivial {
        return Ok((report, None));
    }

    let mut min_options = config.min.clone();
    if let Some(base) = &config.checkpoint_dir {
        let name = table_file_name(red.pair);
        min_options.checkpoint = Some(Checkpointing {
            dir: base.join(name.trim_end_matches(".tsv")),
            every: config.checkpoint_every,
            resume: true,
        });
    }
    let min = minimize_entropy(&red.marg, &min_options)?;
    let max = if config.analytic_max {
        maximize_analytic(&red.marg)?
    } else {
        maximize_entropy(&red.marg, config.kkt_tol)?
    };
    report.status = min.status.into();
    report.h_min = min.h_min.0.min(h_data);
    report.h_max = max.h_max.0.max(h_data);
    report.min_iterations = min.iterations;
    report.bnb_nodes = min.total_nodes;
    report.newton_iterations = max.newton_iterations;
    report.eps_final = min.final_eps();

    let rho = mi_ratio(
        EntropyValue(h_data),
        EntropyValue(report.h_min),
        EntropyValue(report.h_max),
    )?;
    if !(-RHO_TOL..=1.0 + RHO_TOL).contains(&rho) {
        return Err(Error::RatioRange(format!(
            "ratio {rho} for pair {:?} is outside [0, 1] by more than {RHO_TOL:e}",
            red.pair
        )));
    }
    report.rho = Some(rho.clamp(0.0, 1.0));
    info!(
        "pair {:?}: h_min {:.6} h_data {:.6} h_max {:.6} rho {:.6}",
        red.pair, report.h_min, h_data, report.h_max, rho
    );
    let failure = (min.status != MinStatus::Converged)
        .then(|| format!("minimization stopped early: {}", report.status.as_str()));
    Ok((report, failure))
}

fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.11e}")
    }
}

/// Report CSV: a versioned comment header with the tolerance settings,
/// then one row per instance with reals at 12 significant digits.
pub fn write_report(reports: &[InstanceReport], config: &BatchConfig) -> String {
    let mut out = String::new();
    writeln!(out, "# entrobound report v{REPORT_VERSION}").unwrap();
    writeln!(
        out,
        "# eps_default={EPS_DEFAULT:e} eps_fast={EPS_FAST:e} eps={:e} inner_gap={:e} kkt_tol={:e} max_method={}",
        config.min.eps,
        config.min.inner_gap,
        config.kkt_tol,
        if config.analytic_max { "analytic" } else { "newton" }
    )
    .unwrap();
    let mut header = COLUMNS.join(",");
    if config.record_wall_time {
        header.push_str(",wall_time");
    }
    writeln!(out, "{header}").unwrap();
    for r in reports {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.pair.0,
            r.pair.1,
            u8::from(r.trivial),
            r.status.as_str(),
            fmt_real(r.h_data),
            fmt_real(r.h_min),
            fmt_real(r.h_max),
            fmt_real(r.mi_data),
            r.rho.map(fmt_real).unwrap_or_default(),
            r.min_iterations,
            r.bnb_nodes,
            r.newton_iterations,
            fmt_real(r.eps_final)
        )
        .unwrap();
        if config.record_wall_time {
            write!(out, ",{}", r.wall_time.map(fmt_real).unwrap_or_default()).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse a report written by [`write_report`].
pub fn parse_report(text: &str) -> Result<Vec<InstanceReport>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing column header".into(),
    })?;
    let names: Vec<&str> = header.split(',').collect();
    let with_time = names.len() == COLUMNS.len() + 1 && names.last() == Some(&"wall_time");
    if names[..names.len().min(COLUMNS.len())] != COLUMNS[..]
        || !(with_time || names.len() == COLUMNS.len())
    {
        return Err(Error::Parse {
            line: hline,
            msg: format!("unexpected columns {header:?}"),
        });
    }
    let mut reports = Vec::new();
    for (no, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != names.len() {
            return Err(Error::Parse {
                line: no,
                msg: format!("expected {} fields, found {}", names.len(), f.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: no,
            msg: format!("bad {what}"),
        };
        let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(what));
        let real = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                real(s, what).map(Some)
            }
        };
        reports.push(InstanceReport {
            pair: (int(f[0], "k")?, int(f[1], "l")?),
            trivial: match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("trivial flag")),
            },
            status: f[3].parse().map_err(|_| bad("status"))?,
            h_data: real(f[4], "h_data")?,
            h_min: real(f[5], "h_min")?,
            h_max: real(f[6], "h_max")?,
            mi_data: real(f[7], "mi_data")?,
            rho: opt(f[8], "rho")?,
            min_iterations: int(f[9], "min_iterations")?,
            bnb_nodes: int(f[10], "bnb_nodes")?,
            newton_iterations: int(f[11], "newton_iterations")?,
            eps_final: real(f[12], "eps_final")?,
            wall_time: if with_time {
                opt(f[13], "wall_time")?
            } else {
                None
            },
        });
    }
    Ok(reports)
}

/// Summary as JSON, with the tolerance settings alongside.
pub fn summary_json(summary: &BatchSummary, config: &BatchConfig) -> Result<String> {
    let value = serde_json::json!({
        "report_version": REPORT_VERSION,
        "eps_default": EPS_DEFAULT,
        "eps_fast": EPS_FAST,
        "eps": config.min.eps,
        "summary": summary,
    });
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Symmetric ratio matrix over the positions `1..=positions` as CSV.
///
/// Positions whose every pair is trivial are dropped. Entries without a
/// ratio are `nan`; the diagonal is the mean of the finite off-diagonal
/// entries. The first row and column hold the position ids.
pub fn emit_heatmap(reports: &[InstanceReport], positions: usize) -> Result<String> {
    let by_pair: BTreeMap<PairId, &InstanceReport> = reports.iter().map(|r| (r.pair, r)).collect();
    let missing: Vec<String> = (1..=positions)
        .flat_map(|k| (k + 1..=positions).map(move |l| (k, l)))
        .filter(|p| !by_pair.contains_key(p))
        .map(|(k, l)| format!("({k},{l})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Heatmap(format!(
            "missing pairs {}",
            missing.join(" ")
        )));
    }
    let trivial_everywhere: BTreeSet<usize> = (1..=positions)
        .filter(|&k| {
            (1..=positions)
                .filter(|&l| l != k)
                .all(|l| by_pair[&(k.min(l), k.max(l))].trivial)
        })
        .collect();
    let ids: Vec<usize> = (1..=positions)
        .filter(|k| !trivial_everywhere.contains(k))
        .collect();
    if ids.len() < 2 {
        return Err(Error::Heatmap("degenerate heatmap".into()));
    }

    let d = ids.len();
    let mut matrix = vec![f64::NAN; d * d];
    for a in 0..d {
        for b in a + 1..d {
            let v = by_pair[&(ids[a], ids[b])].rho.unwrap_or(f64::NAN);
            matrix[a * d + b] = v;
            matrix[b * d + a] = v;
        }
    }
    let finite: Vec<f64> = (0..d)
        .flat_map(|a| (a + 1..d).map(move |b| (a, b)))
        .map(|(a, b)| matrix[a * d + b])
        .filter(|v| v.is_finite())
        .collect();
    let mean = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    for a in 0..d {
        matrix[a * d + a] = mean;
    }

    let mut out = String::from("id");
    for id in &ids {
        write!(out, ",{id}").unwrap();
    }
    out.push('\n');
    for a in 0..d {
        write!(out, "{}", ids[a]).unwrap();
        for b in 0..d {
            write!(out, ",{}", fmt_real(matrix[a * d + b])).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
