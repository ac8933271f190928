//! Experiment runner for ACQUIRE and SGP: problem generation, tolerance
//! sweeps, summary tables and plot data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod problems;
pub mod report;
pub mod run;

pub use config::{ConfigError, Method, Overrides, RunConfig};
pub use report::{emit_plots, load_sweep};
pub use run::{run_solve, run_sweep, SummaryRow, Sweep};
