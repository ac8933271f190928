//! ACQUIRE: inexact majorize-and-minimize steps on `D_KL + lambda TV_mu`.
//!
//! At `x_k` the KL term is replaced by its second-order model (plus a small
//! `gamma I`) and TV by its reweighted quadratic majorant. A few SGP
//! iterations on that model give `x_hat_k`; a nonmonotone line search along
//! `d_k = x_hat_k - x_k` on the true smoothed objective then gives `x_{k+1}`.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feasible::FeasibleSet;
use crate::kl::{KlQuadraticModel, PoissonData};
use crate::objective::{split_positive_part, Objective, Ray, SmoothedObjective};
use crate::ops::{add_scaled, dist, dot, norm, sub};
use crate::sgp::{sgp_solve, InnerTrace, SgpConfig, SolveResult, SteplengthState};
use crate::trace::{Observer, SolverTrace, StopReason, TraceRow};
use crate::tv::{weighted_laplacian_diagonal, SmoothedTv, TvQuadraticModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquireConfig {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    /// Armijo fraction of the outer line search.
    pub eta: f64,
    /// Backtracking factor of the outer line search.
    pub delta: f64,
    /// Reference values kept by the nonmonotone search; 1 is monotone.
    pub memory: usize,
    pub max_backtracks: usize,
    /// Inner accuracy factor: stop SGP once `||grad_S F_k|| <= theta^k ||grad_S F(x_0)||`.
    pub theta: f64,
    pub inner: SgpConfig,
    /// Outer stop: `||x_{k+1} - x_k|| <= tol ||x_k||`.
    pub tol: f64,
    pub max_iters: usize,
    /// Wall-clock budget in seconds.
    pub max_time: Option<f64>,
}

impl AcquireConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            mu: 1e-2,
            gamma: 1e-5,
            eta: 1e-5,
            delta: 0.5,
            memory: 5,
            max_backtracks: 60,
            theta: 0.1,
            inner: SgpConfig::default(),
            tol: 1e-4,
            max_iters: 10_000,
            max_time: Some(25.0),
        }
    }

    pub fn monotone(mut self) -> Self {
        self.memory = 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("mu", self.mu)?;
        if !(self.gamma >= 0.0) {
            return Err(invalid("gamma", format!("must be nonnegative, got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid("eta", format!("must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(invalid("theta", format!("must lie in (0, 1), got {}", self.theta)));
        }
        if self.memory == 0 {
            return Err(invalid("memory", "must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol", format!("must be nonnegative, got {}", self.tol)));
        }
        if let Some(t) = self.max_time {
            positive("max_time", t)?;
        }
        self.inner.validate()
    }
}

/// `F_k(x) = D^(k)(x) + lambda TV^(k)(x)`.
#[derive(Clone, Debug)]
pub struct OuterModel {
    kl: KlQuadraticModel,
    tv: TvQuadraticModel,
    lambda: f64,
    column_sums: Vec<f64>,
    tv_diagonal: Vec<f64>,
}

impl OuterModel {
    pub fn kl(&self) -> &KlQuadraticModel {
        &self.kl
    }

    pub fn tv(&self) -> &TvQuadraticModel {
        &self.tv
    }

    pub fn anchor(&self) -> &[f64] {
        self.kl.anchor()
    }

    pub fn hessian_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut h = self.kl.hessian_vec(v);
        let t = self.tv.hessian_vec(v);
        h.iter_mut().zip(&t).for_each(|(h, t)| *h += self.lambda * t);
        h
    }
}

/// Builds `F_k` at `x_k`, reusing `A x_k`.
pub fn build_outer_model(
    data: &PoissonData,
    tv: &SmoothedTv,
    lambda: f64,
    gamma: f64,
    x_k: &[f64],
    ax_k: &[f64],
) -> Result<OuterModel> {
    let tv = tv.build_model(x_k)?;
    let tv_diagonal = weighted_laplacian_diagonal(tv.map(), tv.weights());
    Ok(OuterModel {
        kl: data.build_model_from_forward(x_k, ax_k, gamma)?,
        tv,
        lambda,
        column_sums: data.column_sums().to_vec(),
        tv_diagonal,
    })
}

impl Objective for OuterModel {
    fn dim(&self) -> usize {
        self.kl.anchor().len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(x)?.0)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let dx = sub(x, self.kl.anchor());
        let mut hkl = self.kl.hessian_vec(&dx);
        let kl = self.kl.anchor_value()
            + dot(&dx, self.kl.anchor_gradient())
            + 0.5 * dot(&dx, &hkl);
        hkl.iter_mut()
            .zip(self.kl.anchor_gradient())
            .for_each(|(g, a)| *g += a);
        let tg = self.tv.gradient(x);
        let tv = self.tv.value(x);
        hkl.iter_mut().zip(&tg).for_each(|(g, t)| *g += self.lambda * t);
        Ok((kl + self.lambda * tv, hkl))
    }

    fn gradient_split(&self, z: &[f64]) -> Option<Vec<f64>> {
        Some(split_positive_part(&self.column_sums, &self.tv_diagonal, self.lambda, z))
    }

    fn ray<'a>(
        &'a self,
        _x: &'a [f64],
        fx: f64,
        grad: &'a [f64],
        dir: &'a [f64],
    ) -> Result<Box<dyn Ray + 'a>> {
        let hd = self.hessian_vec(dir);
        Ok(Box::new(QuadraticRay {
            fx,
            slope: dot(grad, dir),
            curvature: dot(dir, &hd),
            grad,
            hd,
        }))
    }
}

/// A quadratic restricted to a line is exact in closed form.
struct QuadraticRay<'a> {
    fx: f64,
    slope: f64,
    curvature: f64,
    grad: &'a [f64],
    hd: Vec<f64>,
}

impl Ray for QuadraticRay<'_> {
    fn value(&mut self, t: f64) -> Result<f64> {
        Ok(self.fx + t * self.slope + 0.5 * t * t * self.curvature)
    }

    fn gradient(&mut self, t: f64) -> Result<Vec<f64>> {
        Ok(add_scaled(self.grad, t, &self.hd))
    }
}

/// Per-iteration quantities beyond the trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub iter: usize,
    /// `||x_hat_k - x_k||`
    pub direction_norm: f64,
    /// `grad F(x_k)^T d_k`
    pub slope: f64,
    /// Nonmonotone reference value.
    pub f_ref: f64,
    pub f_next: f64,
    /// Accepted step; 0 when no decrease is representable in floating point.
    pub alpha: f64,
    pub backtracks: usize,
    /// `theta^k ||grad_S F(x_0)||`
    pub inner_target: f64,
    pub inner: InnerTrace,
    /// SGP did not decrease the model; `x_hat_k = x_k` was used.
    pub stagnated: bool,
}

/// Stepwise driver; [`acquire_solve`] runs it to completion.
pub struct Acquire<'a> {
    obj: SmoothedObjective<'a>,
    set: FeasibleSet,
    config: AcquireConfig,
    x: Vec<f64>,
    ax: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    history: VecDeque<f64>,
    state: SteplengthState,
    pg0: f64,
    k: usize,
}

impl<'a> Acquire<'a> {
    pub fn new(
        data: &'a PoissonData,
        set: FeasibleSet,
        x0: &[f64],
        config: AcquireConfig,
    ) -> Result<Self> {
        config.validate()?;
        crate::error::check_len(data.len(), x0.len())?;
        if !set.contains(x0) {
            return Err(Error::Infeasible("ACQUIRE starting point".into()));
        }
        let tv = SmoothedTv::new(data.op().rows(), data.op().cols(), config.mu)?;
        let obj = SmoothedObjective::new(data, tv, config.lambda);
        let ax = data.op().apply_vec(x0);
        let (f, g) = obj.value_and_gradient_from_forward(x0, &ax)?;
        let pg0 = set.projected_gradient_norm(x0, &g)?;
        let mut history = VecDeque::with_capacity(config.memory);
        history.push_back(f);
        Ok(Self {
            obj,
            set,
            config,
            x: x0.to_vec(),
            ax,
            f,
            g,
            history,
            state: SteplengthState::default(),
            pg0,
            k: 0,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn objective_value(&self) -> f64 {
        self.f
    }

    pub fn gradient(&self) -> &[f64] {
        &self.g
    }

    pub fn initial_pg_norm(&self) -> f64 {
        self.pg0
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn steplength_state(&self) -> &SteplengthState {
        &self.state
    }

    pub fn projected_gradient_norm(&self) -> Result<f64> {
        self.set.projected_gradient_norm(&self.x, &self.g)
    }

    /// `theta^k ||grad_S F(x_0)||`
    pub fn inner_target(&self, k: usize) -> f64 {
        self.config.theta.powi(k.min(i32::MAX as usize) as i32) * self.pg0
    }

    /// The model `F_k` at the current iterate.
    pub fn model(&self) -> Result<OuterModel> {
        build_outer_model(
            self.obj.data(),
            self.obj.tv(),
            self.config.lambda,
            self.config.gamma,
            &self.x,
            &self.ax,
        )
    }

    /// One outer iteration `x_k -> x_{k+1}`.
    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let k = self.k + 1;
        let model = self.model()?;
        let inner_target = self.inner_target(k);
        let (x_hat, inner) = sgp_solve(
            &model,
            &self.set,
            &self.x,
            &mut self.state,
            &self.config.inner,
            inner_target,
        )?;
        let stagnated = inner.objective.last() > inner.objective.first();
        let dir = if stagnated {
            vec![0.0; self.x.len()]
        } else {
            sub(&x_hat, &self.x)
        };
        let direction_norm = norm(&dir);
        let slope = dot(&self.g, &dir);
        let f_ref = self.history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let (x_next, alpha, backtracks, f_next) = if direction_norm == 0.0 {
            (None, 1.0, 0, self.f)
        } else {
            let mut ray = self.obj.ray(&self.x, self.f, &self.g, &dir)?;
            let mut alpha = 1.0;
            let mut backtracks = 0;
            let f_next = loop {
                // an infeasible-denominator trial counts as a failed test
                match ray.value(alpha) {
                    Ok(v) if v <= f_ref + self.config.eta * alpha * slope => break Some(v),
                    Ok(_) | Err(Error::NumericalDomain { .. }) => {}
                    Err(e) => return Err(e),
                }
                backtracks += 1;
                if backtracks > self.config.max_backtracks {
                    if f_ref + self.config.eta * slope == f_ref {
                        break None;
                    }
                    return Err(Error::LineSearch {
                        halvings: self.config.max_backtracks,
                        context: "ACQUIRE nonmonotone decrease",
                    });
                }
                alpha *= self.config.delta;
            };
            drop(ray);
            match f_next {
                Some(f_next) => {
                    let x_next = if alpha == 1.0 {
                        x_hat
                    } else {
                        add_scaled(&self.x, alpha, &dir)
                    };
                    (Some(x_next), alpha, backtracks, f_next)
                }
                // no representable decrease: stationary up to round-off
                None => (None, 0.0, backtracks, self.f),
            }
        };

        if let Some(x_next) = x_next {
            self.ax = self.obj.data().op().apply_vec(&x_next);
            let (f, g) = self.obj.value_and_gradient_from_forward(&x_next, &self.ax)?;
            self.f = f;
            self.g = g;
            self.x = x_next;
        }
        if self.history.len() == self.config.memory {
            self.history.pop_front();
        }
        self.history.push_back(self.f);
        self.k = k;
        Ok(StepDiagnostics {
            iter: k,
            direction_norm,
            slope,
            f_ref,
            f_next,
            alpha,
            backtracks,
            inner_target,
            inner,
            stagnated,
        })
    }
}

/// Result of [`acquire_solve`] with the per-step diagnostics.
#[derive(Clone, Debug)]
pub struct AcquireResult {
    pub result: SolveResult,
    pub steps: Vec<StepDiagnostics>,
}

/// Runs ACQUIRE from `x0` until the relative change drops below `tol`, the
/// iteration cap or the time budget is reached.
pub fn acquire_solve(
    data: &PoissonData,
    set: &FeasibleSet,
    x0: &[f64],
    config: &AcquireConfig,
    ground_truth: Option<&[f64]>,
    observer: &mut dyn Observer,
) -> Result<AcquireResult> {
    let start = Instant::now();
    let budget = config.max_time.map(Duration::from_secs_f64);
    let mut solver = Acquire::new(data, *set, x0, config.clone())?;
    let truth_norm = ground_truth.map(norm);
    let rel_err = |z: &[f64]| ground_truth.zip(truth_norm).map(|(t, tn)| dist(z, t) / tn);

    let mut trace = SolverTrace::default();
    let row0 = TraceRow::start(solver.f, Some(solver.pg0), rel_err(x0), 0.0);
    observer.observe(&row0, x0);
    trace.push(row0);

    let mut steps = Vec::new();
    let stop_reason = loop {
        if solver.k >= config.max_iters {
            break StopReason::MaxIterations;
        }
        let x_prev_norm = norm(&solver.x);
        let x_prev = solver.x.clone();
        let diag = solver.step()?;
        let rel_change = dist(&solver.x, &x_prev) / x_prev_norm.max(f64::MIN_POSITIVE);
        let elapsed = start.elapsed();
        let row = TraceRow {
            iter: diag.iter,
            objective: solver.f,
            rel_change: Some(rel_change),
            alpha: Some(diag.alpha),
            inner_iters: Some(diag.inner.iterations),
            pg_norm: Some(solver.projected_gradient_norm()?),
            rel_error: rel_err(&solver.x),
            time_s: elapsed.as_secs_f64(),
            inner_cap_hit: diag.inner.cap_hit,
        };
        observer.observe(&row, &solver.x);
        trace.push(row);
        let stationary = diag.direction_norm == 0.0 || diag.alpha == 0.0;
        steps.push(diag);
        if stationary {
            break StopReason::Stationary;
        }
        if rel_change <= config.tol {
            break StopReason::Tolerance;
        }
        if budget.is_some_and(|b| elapsed >= b) {
            break StopReason::TimeBudget;
        }
    };
    Ok(AcquireResult {
        result: SolveResult {
            x: solver.x,
            trace,
            stop_reason,
        },
        steps,
    })
}
