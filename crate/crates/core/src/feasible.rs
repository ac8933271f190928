//! Feasible sets `S1 = {x >= 0}` and `S2 = {x >= 0, e^T x = c}`: exact
//! Euclidean and diagonally weighted projections, tangent-cone projections
//! and projected gradients.
//!
//! Active constraints are identified by exact zeros. Every feasible iterate
//! produced by the solvers comes out of a projection (which writes exact
//! zeros) or a convex combination of such points.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::ops::norm;

/// Relative tolerance on the flux equality in [`FeasibleSet::contains`].
pub const FLUX_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// `x >= 0`
    Nonneg,
    /// `x >= 0` and `sum(x) = flux`
    NonnegFlux { flux: f64 },
}

impl FeasibleSet {
    pub fn nonneg_flux(flux: f64) -> Result<Self> {
        if !(flux > 0.0) || !flux.is_finite() {
            return Err(invalid("flux", format!("must be positive, got {flux}")));
        }
        Ok(FeasibleSet::NonnegFlux { flux })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.iter().any(|&v| !(v >= 0.0)) {
            return false;
        }
        match *self {
            FeasibleSet::Nonneg => true,
            FeasibleSet::NonnegFlux { flux } => (x.iter().sum::<f64>() - flux).abs() <= FLUX_TOL * flux,
        }
    }

    fn check_feasible(&self, x: &[f64]) -> Result<()> {
        if let Some(i) = x.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::Infeasible(format!("x[{i}] = {} is negative", x[i])));
        }
        if let FeasibleSet::NonnegFlux { flux } = *self {
            let total: f64 = x.iter().sum();
            if (total - flux).abs() > FLUX_TOL * flux {
                return Err(Error::Infeasible(format!(
                    "sum(x) = {total} differs from flux {flux}"
                )));
            }
        }
        Ok(())
    }

    /// Euclidean projection.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        match *self {
            FeasibleSet::Nonneg => v.iter().map(|&a| a.max(0.0)).collect(),
            FeasibleSet::NonnegFlux { flux } => {
                let tau = simplex_threshold(v, flux);
                v.iter().map(|&a| (a - tau).max(0.0)).collect()
            }
        }
    }

    /// Projection in the norm `sum (x_i - v_i)^2 / d_i`.
    pub fn project_weighted(&self, metric: &DiagonalMetric, v: &[f64]) -> Result<Vec<f64>> {
        check_len(metric.len(), v.len())?;
        Ok(match *self {
            FeasibleSet::Nonneg => v.iter().map(|&a| a.max(0.0)).collect(),
            FeasibleSet::NonnegFlux { flux } => {
                let d = metric.diagonal();
                let tau = weighted_simplex_threshold(v, d, flux);
                v.iter()
                    .zip(d)
                    .map(|(&a, &di)| (a - tau * di).max(0.0))
                    .collect()
            }
        })
    }

    /// Projection of `-grad` onto the tangent cone of the set at `x`.
    pub fn projected_gradient(&self, x: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), grad.len())?;
        self.check_feasible(x)?;
        Ok(match self {
            FeasibleSet::Nonneg => x
                .iter()
                .zip(grad)
                .map(|(&xi, &g)| if xi > 0.0 { -g } else { (-g).max(0.0) })
                .collect(),
            FeasibleSet::NonnegFlux { .. } => tangent_projection_flux(x, grad),
        })
    }

    pub fn projected_gradient_norm(&self, x: &[f64], grad: &[f64]) -> Result<f64> {
        Ok(norm(&self.projected_gradient(x, grad)?))
    }

    pub fn is_stationary(&self, x: &[f64], grad: &[f64], tol: f64) -> Result<bool> {
        Ok(self.projected_gradient_norm(x, grad)? <= tol)
    }
}

/// `tau` with `sum max(v_i - tau, 0) = c`, by sorting.
fn simplex_threshold(v: &[f64], c: f64) -> f64 {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = f64::NEG_INFINITY;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - c) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

/// `tau` with `sum max(v_i - tau d_i, 0) = c`. The left side is piecewise
/// linear and nonincreasing in `tau` with breakpoints `v_i / d_i`; scanning
/// them in decreasing order gives the exact root.
fn weighted_simplex_threshold(v: &[f64], d: &[f64], c: f64) -> f64 {
    let mut order: Vec<usize> = (0..v.len()).collect();
    let bp = |i: usize| v[i] / d[i];
    order.sort_unstable_by(|&a, &b| bp(b).total_cmp(&bp(a)));
    let (mut sv, mut sd) = (0.0, 0.0);
    let mut tau = f64::NEG_INFINITY;
    for (j, &i) in order.iter().enumerate() {
        sv += v[i];
        sd += d[i];
        let candidate = (sv - c) / sd;
        let next = order.get(j + 1).map(|&k| bp(k)).unwrap_or(f64::NEG_INFINITY);
        tau = candidate;
        if candidate >= next {
            break;
        }
    }
    tau
}

/// Projection of `-grad` onto `{v : e^T v = 0, v_i >= 0 where x_i = 0}`.
///
/// KKT: `v_i = -g_i - sigma` on free coordinates and `max(-g_i - sigma, 0)`
/// on active ones, with `sigma` the root of `sum v_i = 0`. The root is found
/// by adding active coordinates in decreasing order of `-g_i`.
fn tangent_projection_flux(x: &[f64], grad: &[f64]) -> Vec<f64> {
    let mut free_count = 0usize;
    let mut free_sum = 0.0;
    let mut active: Vec<f64> = Vec::new();
    for (&xi, &g) in x.iter().zip(grad) {
        if xi > 0.0 {
            free_count += 1;
            free_sum += -g;
        } else {
            active.push(-g);
        }
    }
    active.sort_unstable_by(|a, b| b.total_cmp(a));

    let sigma = {
        let mut sum = free_sum;
        let mut count = free_count;
        let mut sigma = None;
        for j in 0..=active.len() {
            if count > 0 {
                let candidate = sum / count as f64;
                let next_ok = active.get(j).is_none_or(|&a| a <= candidate);
                if next_ok {
                    sigma = Some(candidate);
                    break;
                }
            }
            if let Some(&a) = active.get(j) {
                sum += a;
                count += 1;
            }
        }
        sigma
    };
    match sigma {
        // only reachable for empty input
        None => vec![0.0; x.len()],
        Some(sigma) => x
            .iter()
            .zip(grad)
            .map(|(&xi, &g)| {
                let v = -g - sigma;
                if xi > 0.0 {
                    v
                } else {
                    v.max(0.0)
                }
            })
            .collect(),
    }
}

/// Diagonal scaling `C = diag(d)` with `d_min <= d_i <= d_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMetric {
    d: Vec<f64>,
    d_min: f64,
    d_max: f64,
}

impl DiagonalMetric {
    pub fn new(d: Vec<f64>, d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min > 0.0) || !(d_min <= d_max) {
            return Err(invalid(
                "metric bounds",
                format!("need 0 < d_min <= d_max, got [{d_min}, {d_max}]"),
            ));
        }
        if let Some(i) = d.iter().position(|&v| !(v >= d_min && v <= d_max)) {
            return Err(invalid(
                "metric",
                format!("d[{i}] = {} outside [{d_min}, {d_max}]", d[i]),
            ));
        }
        Ok(Self { d, d_min, d_max })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            d: vec![1.0; n],
            d_min: 1.0,
            d_max: 1.0,
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.d_min, self.d_max)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonneg_projection_clamps() {
        assert_eq!(FeasibleSet::Nonneg.project(&[-1.0, 2.0]), vec![0.0, 2.0]);
        let m = DiagonalMetric::new(vec![0.5, 3.0], 0.1, 10.0).unwrap();
        assert_eq!(
            FeasibleSet::Nonneg.project_weighted(&m, &[-3.0, 5.0]).unwrap(),
            vec![0.0, 5.0]
        );
    }

    #[test]
    fn flux_projection_examples() {
        let s2 = FeasibleSet::nonneg_flux(1.0).unwrap();
        assert_eq!(s2.project(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(s2.project(&[2.0, 2.0]), vec![0.5, 0.5]);
        assert_eq!(s2.project(&[3.0, -1.0]), vec![1.0, 0.0]);
        assert!(FeasibleSet::nonneg_flux(0.0).is_err());
        assert!(FeasibleSet::nonneg_flux(-1.0).is_err());
    }

    #[test]
    fn weighted_flux_projection_small_case() {
        // min (x1-1)^2 + (x2-1)^2/4 on x >= 0, x1 + x2 = 1:
        // x = (1 - tau, 1 - 4 tau), 2 - 5 tau = 1 => tau = 0.2
        let s2 = FeasibleSet::nonneg_flux(1.0).unwrap();
        let m = DiagonalMetric::new(vec![1.0, 4.0], 1.0, 4.0).unwrap();
        let x = s2.project_weighted(&m, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn weighted_projection_with_negative_threshold() {
        let s2 = FeasibleSet::nonneg_flux(10.0).unwrap();
        let m = DiagonalMetric::new(vec![1.0, 2.0, 0.5], 0.5, 2.0).unwrap();
        let x = s2.project_weighted(&m, &[1.0, -1.0, 0.0]).unwrap();
        assert!((x.iter().sum::<f64>() - 10.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn projected_gradient_s1() {
        let pg = FeasibleSet::Nonneg
            .projected_gradient(&[0.0, 1.0], &[1.0, -1.0])
            .unwrap();
        assert_eq!(pg, vec![0.0, 1.0]);
        let pg = FeasibleSet::Nonneg
            .projected_gradient(&[2.0, 1.0], &[1.0, -1.0])
            .unwrap();
        assert_eq!(pg, vec![-1.0, 1.0]);
        assert!(FeasibleSet::Nonneg
            .projected_gradient(&[-1.0, 1.0], &[0.0, 0.0])
            .is_err());
    }

    #[test]
    fn projected_gradient_s2_sums_to_zero() {
        let s2 = FeasibleSet::nonneg_flux(3.0).unwrap();
        let x = [0.0, 1.0, 2.0, 0.0];
        let g = [0.3, -1.0, 0.5, 2.0];
        let pg = s2.projected_gradient(&x, &g).unwrap();
        assert!(pg.iter().sum::<f64>().abs() < 1e-14);
        assert!(pg[0] >= 0.0 && pg[3] >= 0.0);
        // all coordinates active: only v = 0 is feasible
        let s2 = FeasibleSet::nonneg_flux(1.0).unwrap();
        assert!(s2.projected_gradient(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn stationarity_checks() {
        let set = FeasibleSet::Nonneg;
        assert!(set.is_stationary(&[0.0, 3.0], &[0.0, 0.0], 0.0).unwrap());
        assert!(!set.is_stationary(&[1.0, 3.0], &[0.5, 0.0], 0.1).unwrap());
    }

    #[test]
    fn metric_bounds_are_enforced() {
        assert!(DiagonalMetric::new(vec![1.0, 5.0], 0.5, 2.0).is_err());
        assert!(DiagonalMetric::new(vec![1.0], 0.0, 2.0).is_err());
        assert!(DiagonalMetric::new(vec![1.0], 2.0, 1.0).is_err());
    }
}
