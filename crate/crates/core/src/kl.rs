//! Generalized Kullback-Leibler data fidelity for Poisson counts,
//!
//! `D(x) = sum_j y_j ln(y_j / (Ax+b)_j) + (Ax+b)_j - y_j`,
//!
//! with `y_j ln(.) = 0` when `y_j = 0`, plus its derivatives and the
//! second-order model anchored at an iterate.

use crate::blur::BlurOperator;
use crate::error::{check_len, invalid, Error, Result};
use crate::image::Image;
use crate::ops::{dot, sub};

/// Relative floor applied to `(Ax+b)_j`, in units of `max(b)`.
pub const DENOMINATOR_FLOOR: f64 = 1e-15;

/// Observed counts `y`, background `b` and blurring operator `A`.
#[derive(Clone, Debug)]
pub struct PoissonData {
    y: Vec<f64>,
    b: Vec<f64>,
    op: BlurOperator,
    bmax: f64,
    floor: f64,
    column_sums: Vec<f64>,
}

impl PoissonData {
    pub fn new(y: Vec<f64>, b: Vec<f64>, op: BlurOperator) -> Result<Self> {
        check_len(op.len(), y.len())?;
        check_len(op.len(), b.len())?;
        if y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid("y", "observations must be finite and nonnegative"));
        }
        if b.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(invalid("b", "background must be strictly positive"));
        }
        let bmax = b.iter().copied().fold(0.0, f64::max);
        let column_sums = op.apply_adjoint_vec(&vec![1.0; op.len()]);
        Ok(Self {
            y,
            b,
            op,
            bmax,
            floor: DENOMINATOR_FLOOR * bmax,
            column_sums,
        })
    }

    /// Constant background `b = background * e`.
    pub fn with_constant_background(y: &Image, background: f64, op: BlurOperator) -> Result<Self> {
        Self::new(y.to_vector(), vec![background; y.len()], op)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn op(&self) -> &BlurOperator {
        &self.op
    }

    /// `A^T e`
    pub fn column_sums(&self) -> &[f64] {
        &self.column_sums
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `e^T (y - b)`, the flux preserved by a normalized blur.
    pub fn flux(&self) -> f64 {
        self.y.iter().zip(&self.b).map(|(y, b)| y - b).sum()
    }

    /// `Ax + b` from a precomputed `Ax`, with round-off negatives floored.
    pub fn denominators(&self, ax: &[f64]) -> Result<Vec<f64>> {
        let scale = ax.iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.bmax;
        ax.iter()
            .zip(&self.b)
            .enumerate()
            .map(|(j, (a, b))| {
                let z = a + b;
                if z >= self.floor {
                    Ok(z)
                } else if z >= -1e-12 * scale {
                    Ok(self.floor)
                } else {
                    Err(Error::NumericalDomain { index: j, value: z })
                }
            })
            .collect()
    }

    /// KL value from the denominators `Ax + b`.
    pub fn value_from_denominators(&self, z: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(z)
            .map(|(&y, &z)| {
                if y > 0.0 {
                    y * (y / z).ln() + z - y
                } else {
                    z
                }
            })
            .sum()
    }

    /// Gradient `A^T (e - y / (Ax + b))` from the denominators.
    pub fn gradient_from_denominators(&self, z: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.y.iter().zip(z).map(|(y, z)| 1.0 - y / z).collect();
        self.op.apply_adjoint_vec(&r)
    }

    pub fn kl_value(&self, x: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        let z = self.denominators(&self.op.apply_vec(x))?;
        Ok(self.value_from_denominators(&z))
    }

    pub fn kl_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        let z = self.denominators(&self.op.apply_vec(x))?;
        Ok(self.gradient_from_denominators(&z))
    }

    /// Diagonal of `U(x)^2`, i.e. `y / (Ax+b)^2`.
    pub fn curvature_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.denominators(&self.op.apply_vec(x))?;
        Ok(self.curvature_from_denominators(&z))
    }

    fn curvature_from_denominators(&self, z: &[f64]) -> Vec<f64> {
        self.y.iter().zip(z).map(|(y, z)| y / (z * z)).collect()
    }

    /// `A^T U(x)^2 A v`.
    pub fn kl_hessian_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), v.len())?;
        let u2 = self.curvature_weights(x)?;
        Ok(weighted_normal_product(&self.op, &u2, v))
    }

    /// Second-order model of the KL term anchored at `anchor`.
    pub fn build_model(&self, anchor: &[f64], gamma: f64) -> Result<KlQuadraticModel> {
        let ax = self.op.apply_vec(anchor);
        self.build_model_from_forward(anchor, &ax, gamma)
    }

    /// As [`PoissonData::build_model`], reusing a precomputed `A x_k`.
    pub fn build_model_from_forward(
        &self,
        anchor: &[f64],
        ax: &[f64],
        gamma: f64,
    ) -> Result<KlQuadraticModel> {
        check_len(self.len(), anchor.len())?;
        if !(gamma >= 0.0) {
            return Err(invalid("gamma", format!("must be nonnegative, got {gamma}")));
        }
        let z = self.denominators(ax)?;
        Ok(KlQuadraticModel {
            anchor: anchor.to_vec(),
            value: self.value_from_denominators(&z),
            gradient: self.gradient_from_denominators(&z),
            curvature: self.curvature_from_denominators(&z),
            gamma,
            op: self.op.clone(),
        })
    }
}

/// `A^T diag(w) A v`
fn weighted_normal_product(op: &BlurOperator, w: &[f64], v: &[f64]) -> Vec<f64> {
    let mut av = op.apply_vec(v);
    av.iter_mut().zip(w).for_each(|(a, w)| *a *= w);
    op.apply_adjoint_vec(&av)
}

/// `D(x_k) + (x-x_k)^T g_k + 1/2 (x-x_k)^T (A^T U_k^2 A + gamma I)(x-x_k)`.
#[derive(Clone, Debug)]
pub struct KlQuadraticModel {
    anchor: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    curvature: Vec<f64>,
    gamma: f64,
    op: BlurOperator,
}

impl KlQuadraticModel {
    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `D(x_k)`
    pub fn anchor_value(&self) -> f64 {
        self.value
    }

    /// `grad D(x_k)`
    pub fn anchor_gradient(&self) -> &[f64] {
        &self.gradient
    }

    /// Diagonal of `U(x_k)`, `sqrt(y) / (A x_k + b)`.
    pub fn u_diagonal(&self) -> Vec<f64> {
        self.curvature.iter().map(|c| c.sqrt()).collect()
    }

    /// `(A^T U_k^2 A + gamma I) v`
    pub fn hessian_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = weighted_normal_product(&self.op, &self.curvature, v);
        if self.gamma != 0.0 {
            out.iter_mut().zip(v).for_each(|(o, v)| *o += self.gamma * v);
        }
        out
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let dx = sub(x, &self.anchor);
        let hdx = self.hessian_vec(&dx);
        self.value + dot(&dx, &self.gradient) + 0.5 * dot(&dx, &hdx)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let dx = sub(x, &self.anchor);
        let mut g = self.hessian_vec(&dx);
        g.iter_mut().zip(&self.gradient).for_each(|(g, a)| *g += a);
        g
    }
}
