//! Scaled gradient projection (SGP).
//!
//! Iteration: `z+ = z + rho (P_{S,C^-1}(z - nu C grad F(z)) - z)` with a
//! diagonal scaling `C`, an adaptive Barzilai-Borwein steplength `nu`
//! (ABB_min, with memory kept across calls) and a monotone backtracking
//! search on `rho`.
//!
//! Used both as the inner solver of ACQUIRE, where it minimizes the
//! quadratic model `F_k` with a projected-gradient stopping test, and as a
//! standalone method on the smoothed objective.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feasible::{DiagonalMetric, FeasibleSet};
use crate::kl::PoissonData;
use crate::objective::{Objective, SmoothedObjective};
use crate::ops::{dist, dot, norm, sub};
use crate::trace::{Observer, SolverTrace, StopReason, TraceRow};
use crate::tv::SmoothedTv;

/// Iteration cap used when `max_iters = 0` ("uncapped").
pub const UNCAPPED_ITERATION_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ScalingBounds {
    fn default() -> Self {
        Self {
            lower: 1e-4,
            upper: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingRule {
    /// `d_i = clamp(z_i, lower, upper)`
    ClampedIterate(ScalingBounds),
    /// `d_i = clamp(z_i / V_i(z), lower, upper)` with `V` the positive part
    /// of the objective's gradient split; falls back to the clamped iterate
    /// when the objective offers no split.
    SplitGradient(ScalingBounds),
    Identity,
}

impl Default for ScalingRule {
    fn default() -> Self {
        ScalingRule::ClampedIterate(ScalingBounds::default())
    }
}

/// Diagonal scaling `d_i = min(upper, max(lower, z_i))`.
pub fn scaling_matrix(z: &[f64], bounds: ScalingBounds) -> DiagonalMetric {
    let d = z.iter().map(|&v| v.max(bounds.lower).min(bounds.upper)).collect();
    DiagonalMetric::new(d, bounds.lower, bounds.upper).expect("clamped entries lie within bounds")
}

impl ScalingRule {
    pub fn metric(&self, obj: &dyn Objective, z: &[f64]) -> DiagonalMetric {
        match *self {
            ScalingRule::ClampedIterate(b) => scaling_matrix(z, b),
            ScalingRule::SplitGradient(b) => match obj.gradient_split(z) {
                Some(v) => {
                    let ratio: Vec<f64> = z.iter().zip(&v).map(|(z, v)| z / v).collect();
                    scaling_matrix(&ratio, b)
                }
                None => scaling_matrix(z, b),
            },
            ScalingRule::Identity => DiagonalMetric::identity(z.len()),
        }
    }

    fn bounds(&self) -> Option<ScalingBounds> {
        match *self {
            ScalingRule::ClampedIterate(b) | ScalingRule::SplitGradient(b) => Some(b),
            ScalingRule::Identity => None,
        }
    }
}

/// ABB_min memory: recent BB2 steplengths and the switching threshold.
/// Meant to outlive a single [`sgp_solve`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct SteplengthState {
    buffer: VecDeque<f64>,
    memory: usize,
    tau: f64,
    nu_min: f64,
    nu_max: f64,
}

impl Default for SteplengthState {
    fn default() -> Self {
        Self::new(3, 0.5, 1e-10, 1e10).expect("default parameters are valid")
    }
}

impl SteplengthState {
    pub fn new(memory: usize, tau: f64, nu_min: f64, nu_max: f64) -> Result<Self> {
        if memory == 0 {
            return Err(invalid("memory", "must be at least 1"));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {tau}")));
        }
        if !(nu_min > 0.0 && nu_min < nu_max) {
            return Err(invalid(
                "steplength bounds",
                format!("need 0 < nu_min < nu_max, got [{nu_min}, {nu_max}]"),
            ));
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(memory),
            memory,
            tau,
            nu_min,
            nu_max,
        })
    }

    pub fn buffer(&self) -> &VecDeque<f64> {
        &self.buffer
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.nu_min, self.nu_max)
    }

    fn clamp(&self, nu: f64) -> f64 {
        nu.max(self.nu_min).min(self.nu_max)
    }

    /// Steplength for the first iteration of a call: the smallest remembered
    /// BB2 value, or 1 when nothing is remembered yet.
    pub fn initial_steplength(&self) -> f64 {
        self.buffer
            .iter()
            .copied()
            .reduce(f64::min)
            .map_or(1.0, |nu| self.clamp(nu))
    }

    /// ABB_min steplength from `s = z_j - z_{j-1}`, `w = g_j - g_{j-1}` and
    /// the scaling at `z_j`.
    pub fn abbmin_steplength(&mut self, s: &[f64], w: &[f64], metric: &DiagonalMetric) -> f64 {
        let d = metric.diagonal();
        let (mut s_cinv_cinv_s, mut s_cinv_w, mut s_c_w, mut w_c_c_w) = (0.0, 0.0, 0.0, 0.0);
        for ((&si, &wi), &di) in s.iter().zip(w).zip(d) {
            s_cinv_cinv_s += si * si / (di * di);
            s_cinv_w += si * wi / di;
            s_c_w += si * wi * di;
            w_c_c_w += wi * wi * di * di;
        }
        if !(s_cinv_w > 0.0) || !(w_c_c_w > 0.0) {
            return self.nu_max;
        }
        let bb1 = s_cinv_cinv_s / s_cinv_w;
        let bb2 = s_c_w / w_c_c_w;
        if self.buffer.len() == self.memory {
            self.buffer.pop_front();
        }
        self.buffer.push_back(self.clamp(bb2));
        let nu = if bb2 / bb1 < self.tau {
            self.tau *= 0.9;
            self.buffer.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            self.tau *= 1.1;
            bb1
        };
        self.clamp(nu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgpConfig {
    /// Iteration cap; 0 means uncapped.
    pub max_iters: usize,
    /// Sufficient-decrease fraction of the line search.
    pub beta_ls: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub scaling: ScalingRule,
}

impl Default for SgpConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            beta_ls: 1e-4,
            backtrack: 0.5,
            max_backtracks: 50,
            scaling: ScalingRule::default(),
        }
    }
}

impl SgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_ls > 0.0 && self.beta_ls < 1.0) {
            return Err(invalid("beta_ls", format!("must lie in (0, 1), got {}", self.beta_ls)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(invalid(
                "backtrack",
                format!("must lie in (0, 1), got {}", self.backtrack),
            ));
        }
        if let Some(b) = self.scaling.bounds() {
            if !(b.lower > 0.0 && b.lower <= b.upper) {
                return Err(invalid("scaling bounds", format!("{} .. {}", b.lower, b.upper)));
            }
        }
        Ok(())
    }

    fn iteration_limit(&self) -> usize {
        if self.max_iters == 0 {
            UNCAPPED_ITERATION_LIMIT
        } else {
            self.max_iters
        }
    }
}

/// What happened inside one [`sgp_solve`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InnerTrace {
    pub iterations: usize,
    /// Objective at `z_0, z_1, ...`.
    pub objective: Vec<f64>,
    /// Projected-gradient norm at `z_0, z_1, ...`.
    pub pg_norms: Vec<f64>,
    /// Steplengths `nu_j` used.
    pub steplengths: Vec<f64>,
    /// Line-search parameters `rho_j` accepted.
    pub rhos: Vec<f64>,
    /// `grad F(z_j)^T (p_j - z_j)` for every step taken.
    pub slopes: Vec<f64>,
    pub converged: bool,
    pub cap_hit: bool,
}

impl InnerTrace {
    pub fn final_pg_norm(&self) -> f64 {
        *self.pg_norms.last().expect("at least the starting point is recorded")
    }
}

struct StepReport<'a> {
    iter: usize,
    z: &'a [f64],
    value: f64,
    pg_norm: f64,
    rel_change: f64,
    rho: f64,
}

/// Shared SGP loop. `after_step` returns `true` to stop.
fn sgp_core(
    obj: &dyn Objective,
    set: &FeasibleSet,
    z0: &[f64],
    state: &mut SteplengthState,
    config: &SgpConfig,
    pg_target: Option<f64>,
    mut after_step: impl FnMut(&StepReport<'_>) -> bool,
) -> Result<(Vec<f64>, InnerTrace)> {
    config.validate()?;
    if !set.contains(z0) {
        return Err(Error::Infeasible("SGP starting point".into()));
    }
    let mut z = z0.to_vec();
    let (mut f, mut g) = obj.value_and_gradient(&z)?;
    let mut pg_norm = set.projected_gradient_norm(&z, &g)?;
    let mut trace = InnerTrace {
        objective: vec![f],
        pg_norms: vec![pg_norm],
        ..Default::default()
    };
    let mut last_sw: Option<(Vec<f64>, Vec<f64>)> = None;
    let limit = config.iteration_limit();

    loop {
        if pg_target.is_some_and(|t| pg_norm <= t) {
            trace.converged = true;
            break;
        }
        if trace.iterations >= limit {
            trace.cap_hit = config.max_iters != 0;
            break;
        }
        let metric = config.scaling.metric(obj, &z);
        let nu = match &last_sw {
            Some((s, w)) => state.abbmin_steplength(s, w, &metric),
            None => state.initial_steplength(),
        };
        let trial: Vec<f64> = z
            .iter()
            .zip(&g)
            .zip(metric.diagonal())
            .map(|((&zi, &gi), &di)| zi - nu * di * gi)
            .collect();
        let p = set.project_weighted(&metric, &trial)?;
        let dir = sub(&p, &z);
        let slope = dot(&g, &dir);
        if norm(&dir) == 0.0 || !(slope < 0.0) {
            // scaled projection fixed point: stationary up to round-off
            trace.converged = true;
            break;
        }

        let mut ray = obj.ray(&z, f, &g, &dir)?;
        let mut rho = 1.0;
        let mut halvings = 0;
        let f_new = loop {
            let ft = ray.value(rho)?;
            if ft <= f + config.beta_ls * rho * slope {
                break Some(ft);
            }
            halvings += 1;
            if halvings > config.max_backtracks {
                if f + config.beta_ls * slope == f {
                    break None;
                }
                return Err(Error::LineSearch {
                    halvings: config.max_backtracks,
                    context: "SGP sufficient decrease",
                });
            }
            rho *= config.backtrack;
        };
        let Some(f_new) = f_new else {
            // the required decrease is below the resolution of f
            trace.converged = true;
            break;
        };
        let g_new = ray.gradient(rho)?;
        drop(ray);
        let z_new: Vec<f64> = if rho == 1.0 {
            p
        } else {
            z.iter().zip(&dir).map(|(zi, di)| zi + rho * di).collect()
        };

        let rel_change = dist(&z_new, &z) / norm(&z).max(f64::MIN_POSITIVE);
        let stalled = z_new == z;
        last_sw = Some((sub(&z_new, &z), sub(&g_new, &g)));
        z = z_new;
        f = f_new;
        g = g_new;
        pg_norm = set.projected_gradient_norm(&z, &g)?;
        trace.iterations += 1;
        trace.objective.push(f);
        trace.pg_norms.push(pg_norm);
        trace.steplengths.push(nu);
        trace.rhos.push(rho);
        trace.slopes.push(slope);

        let stop = after_step(&StepReport {
            iter: trace.iterations,
            z: &z,
            value: f,
            pg_norm,
            rel_change,
            rho,
        });
        if stop || stalled {
            break;
        }
    }
    Ok((z, trace))
}

/// Runs SGP from `z0` until `||grad_S F|| <= stop_norm_target` or the
/// iteration cap of `config` is reached. `state` carries the steplength
/// memory between calls.
pub fn sgp_solve(
    obj: &dyn Objective,
    set: &FeasibleSet,
    z0: &[f64],
    state: &mut SteplengthState,
    config: &SgpConfig,
    stop_norm_target: f64,
) -> Result<(Vec<f64>, InnerTrace)> {
    sgp_core(obj, set, z0, state, config, Some(stop_norm_target), |_| false)
}

/// Settings for SGP run directly on the smoothed problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgpBaselineConfig {
    pub lambda: f64,
    pub mu: f64,
    pub sgp: SgpConfig,
    /// Stop when `||x_{j+1} - x_j|| <= tol ||x_j||`.
    pub tol: f64,
    pub max_iters: usize,
    pub max_time: Option<f64>,
}

impl SgpBaselineConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            mu: 1e-2,
            sgp: SgpConfig {
                max_iters: 0,
                ..SgpConfig::default()
            },
            tol: 1e-4,
            max_iters: 100_000,
            max_time: Some(25.0),
        }
    }
}

/// Outcome of a full solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub trace: SolverTrace,
    pub stop_reason: StopReason,
}

/// Standalone SGP on `D_KL + lambda TV_mu` with the relative-change stop.
pub fn sgp_standalone(
    data: &PoissonData,
    set: &FeasibleSet,
    x0: &[f64],
    config: &SgpBaselineConfig,
    ground_truth: Option<&[f64]>,
    observer: &mut dyn Observer,
) -> Result<SolveResult> {
    if !(config.lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {}", config.lambda)));
    }
    if !(config.tol >= 0.0) {
        return Err(invalid("tol", format!("must be nonnegative, got {}", config.tol)));
    }
    let (rows, cols) = (data.op().rows(), data.op().cols());
    let tv = SmoothedTv::new(rows, cols, config.mu)?;
    let obj = SmoothedObjective::new(data, tv, config.lambda);
    let start = Instant::now();
    let deadline = config.max_time.map(Duration::from_secs_f64);
    let truth_norm = ground_truth.map(norm);
    let rel_err = |z: &[f64]| -> Option<f64> {
        ground_truth.zip(truth_norm).map(|(t, tn)| dist(z, t) / tn)
    };

    let mut trace = SolverTrace::default();
    let (f0, g0) = obj.value_and_gradient(x0)?;
    let row0 = TraceRow::start(f0, Some(set.projected_gradient_norm(x0, &g0)?), rel_err(x0), 0.0);
    observer.observe(&row0, x0);
    trace.push(row0);

    let mut state = SteplengthState::default();
    let mut inner_cfg = config.sgp;
    inner_cfg.max_iters = config.max_iters;
    let mut reason = StopReason::MaxIterations;
    let (x, inner) = sgp_core(&obj, set, x0, &mut state, &inner_cfg, None, |step| {
        let elapsed = start.elapsed();
        let row = TraceRow {
            iter: step.iter,
            objective: step.value,
            rel_change: Some(step.rel_change),
            alpha: Some(step.rho),
            inner_iters: None,
            pg_norm: Some(step.pg_norm),
            rel_error: rel_err(step.z),
            time_s: elapsed.as_secs_f64(),
            inner_cap_hit: false,
        };
        observer.observe(&row, step.z);
        trace.push(row);
        if step.rel_change <= config.tol {
            reason = StopReason::Tolerance;
            true
        } else if deadline.is_some_and(|d| elapsed >= d) {
            reason = StopReason::TimeBudget;
            true
        } else {
            false
        }
    })?;
    if inner.converged {
        reason = StopReason::Stationary;
    }
    Ok(SolveResult {
        x,
        trace,
        stop_reason: reason,
    })
}
