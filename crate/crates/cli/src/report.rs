//! Tables and gnuplot data built from finished sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::config::Method;
use crate::run::{read_summary, run_dir_name, SummaryRow, RUNS_DIR, SUMMARY_FILE, TRACE_FILE};

/// Reads the summary of a sweep directory and checks that every row has its
/// trace.
pub fn load_sweep(dir: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    let rows = read_summary(&dir.join(SUMMARY_FILE))?;
    for r in &rows {
        let trace = dir.join(RUNS_DIR).join(run_dir_name(r.method, r.tol)).join(TRACE_FILE);
        if !trace.is_file() {
            bail!("missing trace {}", trace.display());
        }
    }
    Ok(rows)
}

/// `(problem, snr)` groups in first-seen order of problem, ascending SNR.
fn groups(rows: &[SummaryRow]) -> Vec<((String, f64), Vec<&SummaryRow>)> {
    let mut map: BTreeMap<(String, u64), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        map.entry((r.problem.clone(), r.snr.to_bits())).or_default().push(r);
    }
    map.into_iter()
        .map(|((p, s), v)| ((p, f64::from_bits(s)), v))
        .collect()
}

fn file_stem(problem: &str, snr: f64) -> String {
    let clean: String = problem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}_snr{snr}")
}

/// Writes, per problem, an error-versus-tolerance and a time-versus-tolerance
/// data file with one series (gnuplot index) per method, plus `plots.gp`.
/// Points are ordered by decreasing tolerance.
pub fn emit_plots(rows: &[SummaryRow], methods: &[Method], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if methods.is_empty() {
        bail!("no methods to plot");
    }
    if rows.is_empty() {
        bail!("no summary rows to plot");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut script = String::from("set logscale xy\nset xrange [*:*] reverse\nset xlabel 'Tol'\nset key outside\nset terminal svg size 640,480\n");
    for ((problem, snr), members) in groups(rows) {
        let stem = file_stem(&problem, snr);
        for (suffix, label, pick) in [
            ("err", "relative error", (|r: &SummaryRow| r.min_rel_err) as fn(&SummaryRow) -> f64),
            ("time", "time (s)", |r: &SummaryRow| r.time_s),
        ] {
            let name = format!("{stem}_{suffix}.dat");
            let mut text = format!("# {problem}, SNR {snr}: {label} versus Tol\n");
            for (i, m) in methods.iter().enumerate() {
                if i > 0 {
                    text.push_str("\n\n");
                }
                writeln!(text, "# {}", m.name())?;
                let mut pts: Vec<&&SummaryRow> = members.iter().filter(|r| r.method == *m).collect();
                pts.sort_by(|a, b| b.tol.total_cmp(&a.tol));
                for r in pts {
                    writeln!(text, "{:e} {:e}", r.tol, pick(r))?;
                }
            }
            let path = out.join(&name);
            fs::write(&path, text)?;
            written.push(path);
            let series: Vec<String> = methods
                .iter()
                .enumerate()
                .map(|(i, m)| format!("'{name}' index {i} with linespoints title '{}'", m.name()))
                .collect();
            writeln!(
                script,
                "set output '{stem}_{suffix}.svg'\nset title '{problem}, SNR {snr}'\nset ylabel '{label}'\nplot {}",
                series.join(", \\\n     ")
            )?;
        }
    }
    let gp = out.join("plots.gp");
    fs::write(&gp, script)?;
    written.push(gp);
    Ok(written)
}

/// Per problem, SNR and method: the row with the smallest error over all
/// tolerances (the largest tolerance wins ties).
pub fn best_rows(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut best: Vec<SummaryRow> = Vec::new();
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.tol.total_cmp(&a.tol));
    for r in sorted {
        match best
            .iter_mut()
            .find(|b| b.problem == r.problem && b.snr == r.snr && b.method == r.method)
        {
            Some(b) if r.min_rel_err < b.min_rel_err => *b = r.clone(),
            Some(_) => {}
            None => best.push(r.clone()),
        }
    }
    best.sort_by(|a, b| {
        (a.problem.as_str(), a.snr.to_bits(), a.method).cmp(&(b.problem.as_str(), b.snr.to_bits(), b.method))
    });
    best
}

/// Markdown table of [`best_rows`].
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from("| problem | SNR | method | min rel err | MSSIM | iters | time (s) | Tol |\n|---|---|---|---|---|---|---|---|\n");
    for r in best_rows(rows) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3e} | {:.3e} | {} | {:.2e} | {:.0e} |",
            r.problem,
            r.snr,
            r.method.name(),
            r.min_rel_err,
            r.mssim,
            r.iters,
            r.time_s,
            r.tol
        );
    }
    s
}
