//! Experiment runner behind the `cdanse` binary.
//!
//! ```text
//! cdanse reference --config exp.json [--out DIR]
//! cdanse run       --config exp.json [--out DIR] [--allow-failure]
//! cdanse sweep     --config exp.json [--out DIR] [--jobs K]
//! ```
//!
//! `run` exits 0 iff the solve converged (or `--allow-failure` is given),
//! 2 on non-convergence and 1 on errors. `sweep` exits 0 whenever every run
//! was executed; failures are recorded in the aggregate table.

pub mod config;
pub mod field;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, Method, SEED_ENV};
pub use field::{ReferenceField, ReferenceKey};

use crate::diagnostics::{estimate_k1, theory_report, write_history_csv, RunSummary, TheoryBounds};
use crate::fem::DofMap;
use crate::mesh::{CoarseGrid, Mesh};
use crate::observations::{noise_interpolant_norm, ObservationSet};
use crate::solvers::{
    compute_reference, hybrid_cda_newton, iterate, IterationHistory, Nudging, ProblemContext, RunOutcome,
    SolverError, Status, Stepper,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("reference error: {0}")]
    Reference(String),
    #[error("solver error: {0}")]
    Solver(String),
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::Solver(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cdanse", version, about = "Steady Navier-Stokes cavity solver with continuous data assimilation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a reference solution by Reynolds continuation.
    Reference(CommonArgs),
    /// Execute one solve and write its history and summary.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Exit 0 even when the solve does not converge.
        #[arg(long)]
        allow_failure: bool,
    },
    /// Execute the Cartesian product of the sweep axes.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn reference_key(cfg: &ExperimentConfig) -> ReferenceKey {
    ReferenceKey {
        n: cfg.n,
        re: cfg.re,
        lid_value: cfg.lid_value,
        gamma_gd: cfg.gamma_gd,
    }
}

fn dofmap_for(cfg: &ExperimentConfig) -> Result<Arc<DofMap>, CliError> {
    let mesh = Mesh::uniform_cavity(cfg.n).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Arc::new(DofMap::new(mesh)))
}

/// Result of the `reference` command.
#[derive(Debug, Clone)]
pub struct ReferenceOutcome {
    pub path: PathBuf,
    pub field: ReferenceField,
}

/// Computes the reference for `cfg` and writes it to its reference path.
pub fn cmd_reference(cfg: &ExperimentConfig) -> Result<ReferenceOutcome, CliError> {
    let dofmap = dofmap_for(cfg)?;
    let solution = compute_reference(dofmap.clone(), cfg.re, &cfg.solver_config())?;
    let field = ReferenceField::new(
        &reference_key(cfg),
        &dofmap,
        solution.state.velocity,
        solution.nonlinear_residual,
    );
    let path = cfg.reference_path();
    field.write(&path)?;
    Ok(ReferenceOutcome { path, field })
}

/// Everything `run` writes to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub summary: RunSummary,
    pub theory: Option<TheoryBounds>,
    /// Set when the solve stopped on a linear-solver failure.
    pub error: Option<String>,
    pub history: IterationHistory,
}

/// Executes the solve described by a single-point configuration. Nothing is
/// written to disk.
pub fn execute(cfg: &ExperimentConfig, reference: Option<&ReferenceField>) -> Result<(RunReport, Option<ObservationSet>), CliError> {
    let dofmap = dofmap_for(cfg)?;
    if let Some(r) = reference {
        r.check(&reference_key(cfg), &dofmap)?;
    } else if cfg.needs_reference() {
        return Err(CliError::Reference("this configuration needs a reference field".into()));
    }
    let solver = cfg.solver_config();
    let ref_u = reference.map(|r| &r.velocity);
    let obs = if cfg.method.uses_observations() {
        let grid = CoarseGrid::new(cfg.grid_n).map_err(|e| CliError::Config(e.to_string()))?;
        let u = ref_u.expect("checked above");
        Some(
            ObservationSet::generate(&dofmap, u, grid, cfg.snr, cfg.u_max, cfg.seed)
                .map_err(|e| CliError::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let interp = match &obs {
        Some(o) => Some(
            crate::fem::CoarseInterpolant::new(&dofmap, o.grid(), cfg.ih_mode, Some(&o.vertex_ids))
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        None => None,
    };
    let ctx = ProblemContext::new(dofmap.clone(), &solver, None, interp.as_ref())?;
    let nudging = match &obs {
        Some(o) => Some(Nudging::new(&ctx, o, solver.mu, cfg.ih_mode)?),
        None => None,
    };
    let u0 = ctx.initial_guess();
    let tracked = if cfg.track_error { ref_u } else { None };
    let result = match cfg.method {
        Method::Picard => iterate(Stepper::Picard, &u0, &ctx, &solver, tracked),
        Method::Newton => iterate(Stepper::Newton, &u0, &ctx, &solver, tracked),
        Method::CdaPicard => iterate(Stepper::CdaPicard(nudging.as_ref().expect("built")), &u0, &ctx, &solver, tracked),
        Method::Hybrid => hybrid_cda_newton(&u0, nudging.as_ref().expect("built"), &ctx, &solver, tracked),
    };
    let (history, error) = match result {
        Ok(RunOutcome { history, .. }) => (history, None),
        Err(SolverError::LinearSolve { history, source, iteration }) => {
            (*history, Some(format!("linear solve failed at iteration {iteration}: {source}")))
        }
        Err(e) => return Err(e.into()),
    };
    let noise_norm = obs.as_ref().map(noise_interpolant_norm);
    let summary = RunSummary::new(&history, noise_norm, cfg.contraction_window);
    let theory = match (ref_u, cfg.method.uses_observations()) {
        (Some(u), true) => theory_report(&solver, 1.0 / cfg.grid_n as f64, estimate_k1(&dofmap, u), cfg.c_i).ok(),
        _ => None,
    };
    Ok((
        RunReport {
            config: cfg.to_json_value(),
            summary,
            theory,
            error,
            history,
        },
        obs,
    ))
}

fn history_csv(report: &RunReport) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_history_csv(&report.history, &mut buf, Some(&format!("config: {}", report.config)))
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(buf)
}

/// Writes `history.csv`, `summary.json` and, when used,
/// `observations.json` into `dir`.
pub fn write_run_outputs(dir: &Path, report: &RunReport, obs: Option<&ObservationSet>) -> Result<(), CliError> {
    write_file(&dir.join("history.csv"), &history_csv(report)?)?;
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write_file(&dir.join("summary.json"), s.as_bytes())?;
    if let Some(o) = obs {
        let mut s = o.to_json().map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        write_file(&dir.join("observations.json"), s.as_bytes())?;
    }
    Ok(())
}

fn load_reference(cfg: &ExperimentConfig) -> Result<Option<ReferenceField>, CliError> {
    if cfg.needs_reference() {
        ReferenceField::read(&cfg.reference_path()).map(Some)
    } else {
        Ok(None)
    }
}

/// Runs one solve and writes its outputs to `cfg.out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let reference = load_reference(cfg)?;
    let (report, obs) = execute(cfg, reference.as_ref())?;
    write_run_outputs(&cfg.out_dir, &report, obs.as_ref())?;
    Ok(report)
}

/// One row of the aggregate sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: ExperimentConfig,
    pub outcome: Result<RunReport, CliError>,
}

pub const SWEEP_COLUMNS: [&str; 14] = [
    "run",
    "Re",
    "N",
    "mu",
    "snr",
    "seed",
    "status",
    "iterations",
    "final_residual",
    "min_l2_error",
    "contraction_rate",
    "noise_norm",
    "error_to_noise",
    "error",
];

fn status_label(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::MaxIter => "max_iter",
        Status::Diverged => "diverged",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

impl SweepRow {
    fn record(&self, index: usize) -> Vec<String> {
        let c = &self.config;
        let mut row = vec![
            index.to_string(),
            c.re.to_string(),
            c.grid_n.to_string(),
            c.mu.to_string(),
            c.snr.to_string(),
            c.seed.to_string(),
        ];
        match &self.outcome {
            Ok(r) => {
                let s = &r.summary;
                row.extend([
                    status_label(s.status).to_string(),
                    s.iterations.to_string(),
                    opt(s.final_residual),
                    opt(s.min_l2_error),
                    opt(s.contraction_rate),
                    opt(s.noise_norm),
                    opt(s.error_to_noise),
                    r.error.clone().unwrap_or_default(),
                ]);
            }
            Err(e) => {
                row.extend(["error".to_string()]);
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.to_string());
            }
        }
        row
    }
}

/// Aggregate table for sweep rows, with the resolved sweep config as a
/// comment header.
pub fn sweep_table(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    let mut buf = format!("# config: {}\n", cfg.to_json_value()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
        for (i, row) in rows.iter().enumerate() {
            w.write_record(row.record(i)).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(buf)
}

/// Runs every point of the sweep, at most `jobs` at a time, computing any
/// missing reference first. Writes per-run directories under `runs/` and
/// the aggregate `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let points = cfg.expand();
    let mut ref_points: Vec<ExperimentConfig> = Vec::new();
    for p in points.iter().filter(|p| p.needs_reference()) {
        if !ref_points.iter().any(|q| q.reference_path() == p.reference_path()) {
            ref_points.push(p.clone());
        }
    }
    pool.install(|| {
        ref_points
            .par_iter()
            .filter(|p| !p.reference_path().exists())
            .map(cmd_reference)
            .collect::<Result<Vec<_>, _>>()
    })?;
    let references: Vec<(PathBuf, ReferenceField)> = ref_points
        .iter()
        .map(|p| Ok((p.reference_path(), ReferenceField::read(&p.reference_path())?)))
        .collect::<Result<_, CliError>>()?;
    let runs_dir = cfg.out_dir.join("runs");
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let reference = references.iter().find(|(path, _)| *path == p.reference_path()).map(|(_, r)| r);
                let outcome = execute(p, reference).and_then(|(report, obs)| {
                    let dir = runs_dir.join(format!("{i:04}_{}", p.run_label()));
                    write_run_outputs(&dir, &report, obs.as_ref())?;
                    Ok(report)
                });
                SweepRow {
                    config: p.clone(),
                    outcome,
                }
            })
            .collect()
    });
    write_file(&cfg.out_dir.join("sweep.csv"), &sweep_table(cfg, &rows)?)?;
    Ok(rows)
}

fn resolve(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let seed = std::env::var(SEED_ENV).ok();
    ExperimentConfig::load(&common.config)?.resolve(common.out.as_deref(), seed.as_deref())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Reference(common) => {
            let cfg = resolve(&common)?;
            let out = cmd_reference(&cfg)?;
            println!("reference written to {}", out.path.display());
            println!("nonlinear residual {:e}", out.field.header.nonlinear_residual);
            Ok(0)
        }
        Command::Run { common, allow_failure } => {
            let cfg = resolve(&common)?;
            let report = cmd_run(&cfg)?;
            let s = &report.summary;
            println!(
                "status {} after {} iterations, final residual {}",
                status_label(s.status),
                s.iterations,
                s.final_residual.map(|r| format!("{r:e}")).unwrap_or_else(|| "n/a".into())
            );
            if let Some(e) = &report.error {
                eprintln!("{e}");
            }
            Ok(if s.status == Status::Converged || allow_failure { 0 } else { 2 })
        }
        Command::Sweep { common, jobs } => {
            let cfg = resolve(&common)?;
            let rows = cmd_sweep(&cfg, jobs)?;
            let converged = rows
                .iter()
                .filter(|r| matches!(&r.outcome, Ok(rep) if rep.summary.status == Status::Converged))
                .count();
            println!("{} runs, {converged} converged; table at {}", rows.len(), cfg.out_dir.join("sweep.csv").display());
            Ok(0)
        }
    }
}
