//! Per-iteration solver records and their CSV form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "iter,objective,rel_change,alpha,inner_iters,pg_norm,rel_error,time_s";

/// One row per iterate; row 0 describes the starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    /// `||x_{k+1} - x_k|| / ||x_k||`
    pub rel_change: Option<f64>,
    pub alpha: Option<f64>,
    pub inner_iters: Option<usize>,
    /// `||grad_S F(x_k)||`
    pub pg_norm: Option<f64>,
    pub rel_error: Option<f64>,
    pub time_s: f64,
    #[serde(default)]
    pub inner_cap_hit: bool,
}

impl TraceRow {
    pub fn start(objective: f64, pg_norm: Option<f64>, rel_error: Option<f64>, time_s: f64) -> Self {
        Self {
            iter: 0,
            objective,
            rel_change: None,
            alpha: None,
            inner_iters: None,
            pg_norm,
            rel_error,
            time_s,
            inner_cap_hit: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative change fell below `Tol`.
    Tolerance,
    MaxIterations,
    TimeBudget,
    /// The search direction vanished: the iterate is stationary.
    Stationary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Number of iterations performed (rows after the starting point).
    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iter)
    }

    /// Row with the smallest relative error, if errors were recorded.
    pub fn min_rel_error(&self) -> Option<&TraceRow> {
        self.rows
            .iter()
            .filter(|r| r.rel_error.is_some())
            .min_by(|a, b| a.rel_error.unwrap().total_cmp(&b.rel_error.unwrap()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                fmt_f(r.objective),
                opt_f(r.rel_change),
                opt_f(r.alpha),
                r.inner_iters.map(|v| v.to_string()).unwrap_or_default(),
                opt_f(r.pg_norm),
                opt_f(r.rel_error),
                fmt_f(r.time_s),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != TRACE_HEADER {
            return Err(csv_err(format!("unexpected header {header:?}")));
        }
        let mut trace = SolverTrace::default();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(csv_err(format!("line {}: expected 8 fields", lineno + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| csv_err(format!("line {}: bad number {s:?}", lineno + 2)))
            };
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            trace.push(TraceRow {
                iter: f[0]
                    .parse()
                    .map_err(|_| csv_err(format!("line {}: bad iter", lineno + 2)))?,
                objective: num(f[1])?,
                rel_change: opt(f[2])?,
                alpha: opt(f[3])?,
                inner_iters: if f[4].is_empty() {
                    None
                } else {
                    Some(
                        f[4].parse()
                            .map_err(|_| csv_err(format!("line {}: bad inner_iters", lineno + 2)))?,
                    )
                },
                pg_norm: opt(f[5])?,
                rel_error: opt(f[6])?,
                time_s: num(f[7])?,
                inner_cap_hit: false,
            });
        }
        Ok(trace)
    }
}

/// Shortest round-trip representation.
pub fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn csv_err(reason: String) -> Error {
    Error::Format {
        format: "trace CSV",
        reason,
    }
}

/// Receives every iterate as it is accepted.
pub trait Observer {
    fn observe(&mut self, row: &TraceRow, x: &[f64]);
}

impl Observer for () {
    fn observe(&mut self, _row: &TraceRow, _x: &[f64]) {}
}

impl<F: FnMut(&TraceRow, &[f64])> Observer for F {
    fn observe(&mut self, row: &TraceRow, x: &[f64]) {
        self(row, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut trace = SolverTrace::default();
        trace.push(TraceRow::start(12.5, Some(3.0), Some(0.4), 0.0));
        trace.push(TraceRow {
            iter: 1,
            objective: 11.0 + 1.0 / 3.0,
            rel_change: Some(0.1),
            alpha: Some(0.5),
            inner_iters: Some(10),
            pg_norm: Some(1e-7),
            rel_error: Some(0.2),
            time_s: 0.013,
            inner_cap_hit: false,
        });
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        assert_eq!(text.lines().nth(1).unwrap(), "0,1.25e1,,,,3e0,4e-1,0e0");
        let back = SolverTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.iterations(), 1);
        assert_eq!(back.min_rel_error().unwrap().iter, 1);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(SolverTrace::read_csv(&b"a,b\n"[..]).is_err());
    }
}
