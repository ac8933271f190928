//! Solver runs and tolerance sweeps with their on-disk results.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use acquire_core::acquire::acquire_solve;
use acquire_core::feasible::FeasibleSet;
use acquire_core::image::Image;
use acquire_core::io::{save_f64img, save_pgm, PgmDepth};
use acquire_core::kl::PoissonData;
use acquire_core::sgp::{sgp_standalone, SolveResult, SteplengthState};
use acquire_core::testbed::{mssim, TestProblem};
use acquire_core::trace::{StopReason, TraceRow};
use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Constraint, Method, RunConfig};
use crate::problems::{build_problem, start_rule};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const PROBLEM_DIR: &str = "problem";
pub const RUNS_DIR: &str = "runs";

/// One line of `summary.csv`; everything refers to the iterate with the
/// smallest relative error of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub problem: String,
    pub snr: f64,
    pub tol: f64,
    pub min_rel_err: f64,
    pub mssim: f64,
    pub iters: usize,
    pub time_s: f64,
}

/// A finished solve.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub tol: f64,
    pub result: SolveResult,
    /// Iterate with the smallest relative error.
    pub best: Vec<f64>,
    pub best_row: TraceRow,
}

pub fn run_dir_name(method: Method, tol: f64) -> String {
    format!("{}_tol{tol:e}", method.name())
}

/// Problem, data and starting point shared by all runs of a sweep.
pub struct Prepared {
    pub problem: TestProblem,
    pub data: PoissonData,
    pub set: FeasibleSet,
    pub x0: Vec<f64>,
    pub lambda: f64,
}

pub fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let problem = build_problem(&cfg.problem)?;
    let lambda = cfg.solver.lambda.or(problem.meta.lambda_hint).ok_or_else(|| {
        anyhow!(
            "solver.lambda: no preset value for {} at SNR {}; pass --lambda",
            cfg.problem.name,
            problem.meta.snr_db
        )
    })?;
    let data = problem.poisson_data()?;
    let set = problem.feasible_set(cfg.solver.constraint == Constraint::S2)?;
    let x0 = problem.start(start_rule(&problem, cfg.solver.start), &set);
    Ok(Prepared {
        problem,
        data,
        set,
        x0,
        lambda,
    })
}

/// Runs one method to one tolerance, keeping the minimum-error iterate.
pub fn run_one(prep: &Prepared, cfg: &RunConfig, method: Method, tol: f64) -> anyhow::Result<RunOutcome> {
    let truth = prep.problem.ground_truth.as_slice();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut observer = |row: &TraceRow, x: &[f64]| {
        if let Some(e) = row.rel_error {
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, x.to_vec()));
            }
        }
    };
    let result = match method {
        Method::Acquire => {
            let c = cfg.acquire_config(prep.lambda, tol);
            acquire_solve(&prep.data, &prep.set, &prep.x0, &c, Some(truth), &mut observer)?.result
        }
        Method::Sgp => {
            let c = cfg.sgp_config(prep.lambda, tol);
            sgp_standalone(&prep.data, &prep.set, &prep.x0, &c, Some(truth), &mut observer)?
        }
    };
    let best_row = result
        .trace
        .min_rel_error()
        .cloned()
        .ok_or_else(|| anyhow!("run recorded no relative errors"))?;
    let (_, best) = best.expect("row 0 always carries an error");
    Ok(RunOutcome {
        method,
        tol,
        result,
        best,
        best_row,
    })
}

pub fn summarize(problem_name: &str, problem: &TestProblem, run: &RunOutcome) -> anyhow::Result<SummaryRow> {
    let (rows, cols) = problem.ground_truth.shape();
    let best = Image::from_vector(run.best.clone(), rows, cols)?;
    Ok(SummaryRow {
        method: run.method,
        problem: problem_name.to_string(),
        snr: problem.meta.snr_db,
        tol: run.tol,
        min_rel_err: run.best_row.rel_error.expect("selected by error"),
        mssim: mssim(&best, &problem.ground_truth)?,
        iters: run.best_row.iter,
        time_s: run.best_row.time_s,
    })
}

#[derive(Serialize)]
struct RunRecord<'a> {
    method: Method,
    tol: f64,
    lambda: f64,
    stop_reason: StopReason,
    iterations: usize,
    best_iter: usize,
    solver: serde_json::Value,
    summary: &'a SummaryRow,
}

fn write_run(dir: &Path, prep: &Prepared, cfg: &RunConfig, run: &RunOutcome, row: &SummaryRow) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    run.result
        .trace
        .write_csv(BufWriter::new(File::create(dir.join(TRACE_FILE))?))?;
    let (rows, cols) = prep.problem.ground_truth.shape();
    let best = Image::from_vector(run.best.clone(), rows, cols)?;
    save_f64img(dir.join("restored.f64img"), &best)?;
    save_pgm(dir.join("restored.pgm"), &best, PgmDepth::Eight)?;
    save_f64img(dir.join("final.f64img"), &Image::from_vector(run.result.x.clone(), rows, cols)?)?;
    let solver = match run.method {
        Method::Acquire => serde_json::to_value(cfg.acquire_config(prep.lambda, run.tol))?,
        Method::Sgp => serde_json::to_value(cfg.sgp_config(prep.lambda, run.tol))?,
    };
    let record = RunRecord {
        method: run.method,
        tol: run.tol,
        lambda: prep.lambda,
        stop_reason: run.result.stop_reason,
        iterations: run.result.trace.iterations(),
        best_iter: run.best_row.iter,
        solver,
        summary: row,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Fully resolved settings, including every solver default.
fn meta_document(cfg: &RunConfig, prep: &Prepared) -> anyhow::Result<serde_json::Value> {
    let mut resolved = cfg.clone();
    resolved.solver.lambda = Some(prep.lambda);
    resolved.solver.start = Some(start_rule(&prep.problem, cfg.solver.start));
    let steplength = SteplengthState::default();
    let (nu_min, nu_max) = steplength.bounds();
    let tol0 = cfg.solver.tol[0];
    Ok(serde_json::json!({
        "config": resolved,
        "problem": prep.problem.meta,
        "solvers": {
            "acquire": cfg.acquire_config(prep.lambda, tol0),
            "sgp": cfg.sgp_config(prep.lambda, tol0),
            "steplength": {
                "memory": steplength.memory(),
                "tau": steplength.tau(),
                "nu_min": nu_min,
                "nu_max": nu_max,
            },
        },
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

/// Result of [`run_sweep`].
#[derive(Clone, Debug)]
pub struct Sweep {
    pub out: PathBuf,
    pub rows: Vec<SummaryRow>,
}

/// For every method and tolerance: a full solve, its trace and images, and a
/// summary row. Runs are independent and spread over a worker pool.
pub fn run_sweep(cfg: &RunConfig) -> anyhow::Result<Sweep> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let out = cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    prep.problem.save(out.join(PROBLEM_DIR))?;
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta_document(cfg, &prep)?)?)?;

    let jobs: Vec<(Method, f64)> = cfg
        .solver
        .methods
        .iter()
        .flat_map(|&m| cfg.solver.tol.iter().map(move |&t| (m, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, tol)| -> anyhow::Result<SummaryRow> {
                let run = run_one(&prep, cfg, method, tol)?;
                let row = summarize(&cfg.problem.name, &prep.problem, &run)?;
                write_run(&out.join(RUNS_DIR).join(run_dir_name(method, tol)), &prep, cfg, &run, &row)?;
                Ok(row)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    write_summary(&out.join(SUMMARY_FILE), &rows)?;
    Ok(Sweep { out, rows })
}

/// A single run: the first method at the first tolerance.
pub fn run_solve(cfg: &RunConfig) -> anyhow::Result<Sweep> {
    let mut one = cfg.clone();
    one.solver.methods.truncate(1);
    one.solver.tol.truncate(1);
    run_sweep(&one)
}
