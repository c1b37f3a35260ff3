use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use entrobound::ingest::{load_dataset, read_table, reduce, synth_dataset, write_dataset};
use entrobound::maximize::{maximize_analytic, maximize_entropy, DEFAULT_KKT_TOL};
use entrobound::minimize::{
    minimize_entropy, Checkpointing, MinOptions, MinStatus, EPS_DEFAULT, EPS_FAST,
};
use entrobound::pipeline::{
    emit_heatmap, parse_report, run_batch, solve_instance, summarize, summary_json, write_report,
    BatchConfig, Failure, InstanceStatus,
};
use entrobound::{bnb::DEFAULT_INNER_GAP, Error};

/// Entropy bounds under fixed marginals and the scaled mutual-information ratio.
///
/// Set ENTROBOUND_LOG (e.g. `info`, `debug`, `entrobound::bnb=trace`) for logs.
#[derive(Parser)]
#[command(name = "entrobound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum entropy of one table's marginals.
    Min {
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Gap history CSV (default: <table stem>_gaps.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum entropy of one table's marginals.
    Max {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = DEFAULT_KKT_TOL)]
        kkt_tol: f64,
        #[arg(long)]
        analytic_max: bool,
    },
    /// Both bounds and the ratio for one table.
    Ratio {
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = DEFAULT_KKT_TOL)]
        kkt_tol: f64,
        #[arg(long)]
        analytic_max: bool,
    },
    /// Every table of a dataset directory or multi-table file.
    Batch {
        #[arg(long)]
        data: PathBuf,
        /// Report CSV; the summary goes next to it as <out>.summary.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = DEFAULT_KKT_TOL)]
        kkt_tol: f64,
        #[arg(long)]
        analytic_max: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write the ratio heatmap CSV over positions 1..=max index.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Add a wall_time column (makes reports run-dependent).
        #[arg(long)]
        wall_time: bool,
    },
    /// Write a synthetic dataset, one file per pair.
    Gen {
        #[arg(long)]
        positions: usize,
        #[arg(long)]
        alphabet: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the correlation summary from a report file.
    Stats {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct SolverArgs {
    /// Relative outer tolerance.
    #[arg(long, default_value_t = EPS_DEFAULT)]
    eps: f64,
    /// Shorthand for --eps 1e-3.
    #[arg(long, conflicts_with = "eps")]
    fast: bool,
    #[arg(long, default_value_t = DEFAULT_INNER_GAP)]
    inner_gap: f64,
    /// Node cap per surrogate solve.
    #[arg(long)]
    node_limit: Option<usize>,
    /// Seconds per minimization.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Checkpoint interval in outer iterations.
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    /// Refine every cell with positive error each iteration.
    #[arg(long)]
    refine_all: bool,
}

impl SolverArgs {
    fn options(&self) -> MinOptions {
        MinOptions {
            eps: if self.fast { EPS_FAST } else { self.eps },
            inner_gap: self.inner_gap,
            node_limit: self.node_limit,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            refine_all: self.refine_all,
            ..MinOptions::default()
        }
    }
}

/// Per-instance failures, as opposed to errors that stop the command.
struct InstanceFailures(usize);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENTROBOUND_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(InstanceFailures(n))) => {
            eprintln!("{n} instance(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Option<InstanceFailures>, Error> {
    match command {
        Command::Min { table, solver, out } => {
            let red = reduce(&read_table(&table)?)?;
            let mut options = solver.options();
            if let Some(dir) = &solver.checkpoint_dir {
                options.checkpoint = Some(Checkpointing {
                    dir: dir.clone(),
                    every: solver.checkpoint_every,
                    resume: true,
                });
            }
            let r = minimize_entropy(&red.marg, &options)?;
            let history = out.unwrap_or_else(|| default_history_path(&table));
            fs::write(&history, r.history_csv())?;
            println!("h_min\t{:.12}", r.h_min.0);
            println!("h_surrogate\t{:.12}", r.h_surrogate);
            println!("iterations\t{}", r.iterations);
            println!("bnb_nodes\t{}", r.total_nodes);
            println!("eps_final\t{:e}", r.final_eps());
            println!("status\t{}", InstanceStatus::from(r.status).as_str());
            println!("gap_history\t{}", history.display());
            let converged = r.status == MinStatus::Converged;
            Ok((!converged).then_some(InstanceFailures(1)))
        }
        Command::Max {
            table,
            kkt_tol,
            analytic_max,
        } => {
            let red = reduce(&read_table(&table)?)?;
            let r = if analytic_max {
                maximize_analytic(&red.marg)?
            } else {
                maximize_entropy(&red.marg, kkt_tol)?
            };
            println!("h_max\t{:.12}", r.h_max.0);
            println!("kkt_residual\t{:e}", r.kkt_residual);
            println!("reduced_hessian_cond\t{:e}", r.reduced_hessian_cond);
            println!("newton_iterations\t{}", r.newton_iterations);
            println!("eta\t{:e}", r.eta);
            Ok(None)
        }
        Command::Ratio {
            table,
            solver,
            kkt_tol,
            analytic_max,
        } => {
            let t = read_table(&table)?;
            let config = BatchConfig {
                min: solver.options(),
                kkt_tol,
                analytic_max,
                checkpoint_dir: solver.checkpoint_dir.clone(),
                checkpoint_every: solver.checkpoint_every,
                ..BatchConfig::default()
            };
            let (r, failure) = solve_instance(&t, &config)?;
            println!("h_data\t{:.12}", r.h_data);
            println!("h_min\t{:.12}", r.h_min);
            println!("h_max\t{:.12}", r.h_max);
            println!("mi_data\t{:.12}", r.mi_data);
            match r.rho {
                Some(rho) => println!("rho\t{rho:.12}"),
                None => println!("rho\tundefined (trivial instance)"),
            }
            println!("status\t{}", r.status.as_str());
            if let Some(msg) = failure {
                eprintln!("{msg}");
                return Ok(Some(InstanceFailures(1)));
            }
            Ok(None)
        }
        Command::Batch {
            data,
            out,
            solver,
            kkt_tol,
            analytic_max,
            workers,
            heatmap,
            json,
            wall_time,
        } => {
            let tables = load_dataset(&data)?;
            let config = BatchConfig {
                min: solver.options(),
                kkt_tol,
                analytic_max,
                workers,
                checkpoint_dir: solver.checkpoint_dir.clone(),
                checkpoint_every: solver.checkpoint_every,
                record_wall_time: wall_time,
            };
            let (reports, summary) = run_batch(&tables, &config)?;
            fs::write(&out, write_report(&reports, &config))?;
            let summary_path = with_suffix(&out, ".summary.json");
            fs::write(&summary_path, summary_json(&summary, &config)?)?;
            if let Some(path) = json {
                fs::write(path, serde_json::to_string_pretty(&reports)?)?;
            }
            if let Some(path) = heatmap {
                let positions = reports.iter().map(|r| r.pair.1).max().unwrap_or(0);
                fs::write(path, emit_heatmap(&reports, positions)?)?;
            }
            println!(
                "{} instances ({} trivial), report {}, summary {}",
                summary.n_instances,
                summary.n_trivial,
                out.display(),
                summary_path.display()
            );
            let failed = summary.failures.len();
            Ok((failed > 0).then_some(InstanceFailures(failed)))
        }
        Command::Gen {
            positions,
            alphabet,
            seed,
            sparsity,
            out,
        } => {
            let tables = synth_dataset(positions, alphabet, seed, sparsity)?;
            write_dataset(&out, &tables)?;
            println!("{} tables written to {}", tables.len(), out.display());
            Ok(None)
        }
        Command::Stats { report } => {
            let reports = parse_report(&fs::read_to_string(&report)?)?;
            let failures = reports
                .iter()
                .filter(|r| {
                    !matches!(
                        r.status,
                        InstanceStatus::Converged | InstanceStatus::Trivial
                    )
                })
                .map(|r| Failure {
                    pair: r.pair,
                    message: format!("status {}", r.status.as_str()),
                })
                .collect();
            let summary = summarize(&reports, failures);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(None)
        }
    }
}

fn default_history_path(table: &Path) -> PathBuf {
    let stem = table
        .file_stem()
        .map_or_else(|| "table".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from(format!("{stem}_gaps.csv"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
