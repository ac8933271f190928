use std::path::PathBuf;
use std::process::ExitCode;

use acquire_cli::config::{parse_method_list, parse_tol_list, Constraint, Method, Overrides, RunConfig};
use acquire_cli::problems::build_problem;
use acquire_cli::report::{emit_plots, format_table, load_sweep};
use acquire_cli::run::{run_solve, run_sweep, Sweep};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "acquire", version, about = "TV-regularized Poisson image restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a problem bundle (ground truth, observation, PSF, metadata).
    Generate(Flags),
    /// One run: the first method at the first tolerance.
    Solve(Flags),
    /// Every method at every tolerance.
    Sweep(Flags),
    /// Tables and gnuplot data from finished sweeps.
    Report {
        /// Sweep output directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Methods to plot, comma separated.
        #[arg(long, default_value = "acquire,sgp")]
        method: String,
        /// Destination of tables and plot data (default: DIR/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem preset (phantom, phantom-modified, cameraman, ...).
    #[arg(long)]
    problem: Option<String>,
    /// Reference PGM for presets without a built-in image.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Solve a previously generated bundle.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Phantom grid size.
    #[arg(long)]
    size: Option<usize>,
    /// acquire, sgp, or a comma-separated list.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, strictly decreasing tolerances.
    #[arg(long)]
    tol: Option<String>,
    /// s1 (x >= 0) or s2 (x >= 0 with fixed flux).
    #[arg(long)]
    constraint: Option<String>,
    /// Seconds per run; 0 disables the clock.
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let constraint = match self.constraint.as_deref() {
            Some(s) => Some(Constraint::parse(s).ok_or_else(|| anyhow!("solver.constraint: expected s1 or s2, got {s:?}"))?),
            None => None,
        };
        cfg.apply(Overrides {
            problem: self.problem,
            image: self.image,
            bundle: self.bundle,
            size: self.size,
            methods: self.method.as_deref().map(parse_method_list).transpose()?,
            lambda: self.lambda,
            mu: self.mu,
            snr: self.snr,
            seed: self.seed,
            tol: self.tol.as_deref().map(parse_tol_list).transpose()?,
            constraint,
            max_time: self.max_time,
            max_iters: self.max_iters,
            out: self.out,
            jobs: self.jobs,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_sweep(sweep: &Sweep) {
    println!("{}", format_table(&sweep.rows));
    println!("results in {}", sweep.out.display());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(flags) => {
            let cfg = flags.resolve()?;
            let problem = build_problem(&cfg.problem)?;
            problem.save(&cfg.out)?;
            println!(
                "{}x{} problem, measured SNR {:.2} dB, flux {:.6e} -> {}",
                problem.meta.rows,
                problem.meta.cols,
                problem.meta.measured_snr(),
                problem.meta.flux,
                cfg.out.display()
            );
        }
        Command::Solve(flags) => print_sweep(&run_solve(&flags.resolve()?)?),
        Command::Sweep(flags) => print_sweep(&run_sweep(&flags.resolve()?)?),
        Command::Report { dirs, method, out } => {
            let methods: Vec<Method> = parse_method_list(&method)?;
            let mut rows = Vec::new();
            for d in &dirs {
                rows.extend(load_sweep(d).with_context(|| format!("loading sweep {}", d.display()))?);
            }
            let out = out.unwrap_or_else(|| dirs[0].join("report"));
            let files = emit_plots(&rows, &methods, &out)?;
            let table = format_table(&rows);
            std::fs::write(out.join("tables.md"), &table)?;
            println!("{table}");
            println!("{} plot files in {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
