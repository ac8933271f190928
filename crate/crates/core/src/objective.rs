//! Smooth objectives as seen by the line-search solvers.
//!
//! Besides value and gradient, an objective can be restricted to a ray
//! `x + t d`. Line searches evaluate many `t` along one direction, and both
//! objectives in this crate can do that far cheaper than from scratch: the
//! quadratic model needs a single Hessian-vector product, the KL term reuses
//! `A x` and `A d`.

use crate::error::Result;
use crate::kl::PoissonData;
use crate::ops::add_scaled;
use crate::tv::{weighted_laplacian_diagonal, SmoothedTv};

/// `A^T e + lambda diag(L_w) z`: the KL part splits as `A^T e - A^T(y/(Ax+b))`
/// and a weighted TV gradient `L_w z` as its diagonal minus its off-diagonal
/// part.
pub fn split_positive_part(column_sums: &[f64], diag: &[f64], lambda: f64, z: &[f64]) -> Vec<f64> {
    column_sums
        .iter()
        .zip(diag)
        .zip(z)
        .map(|((c, d), z)| c + lambda * d * z.max(0.0))
        .collect()
}

pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }

    /// Positive part `V(z)` of a gradient split `grad F = V - U` with
    /// `V, U >= 0`, when one is known.
    fn gradient_split(&self, z: &[f64]) -> Option<Vec<f64>> {
        let _ = z;
        None
    }

    /// Restriction to `x + t * dir`; `fx` and `grad` are the value and
    /// gradient at `x`.
    fn ray<'a>(
        &'a self,
        x: &'a [f64],
        fx: f64,
        grad: &'a [f64],
        dir: &'a [f64],
    ) -> Result<Box<dyn Ray + 'a>> {
        let _ = (fx, grad);
        Ok(Box::new(PlainRay { obj: self, x, dir }))
    }
}

pub trait Ray {
    fn value(&mut self, t: f64) -> Result<f64>;
    fn gradient(&mut self, t: f64) -> Result<Vec<f64>>;
}

struct PlainRay<'a, O: ?Sized> {
    obj: &'a O,
    x: &'a [f64],
    dir: &'a [f64],
}

impl<O: Objective + ?Sized> Ray for PlainRay<'_, O> {
    fn value(&mut self, t: f64) -> Result<f64> {
        self.obj.value(&add_scaled(self.x, t, self.dir))
    }

    fn gradient(&mut self, t: f64) -> Result<Vec<f64>> {
        self.obj.gradient(&add_scaled(self.x, t, self.dir))
    }
}

/// `F(x) = D_KL(x) + lambda * TV_mu(x)`.
#[derive(Clone, Debug)]
pub struct SmoothedObjective<'a> {
    data: &'a PoissonData,
    tv: SmoothedTv,
    lambda: f64,
}

impl<'a> SmoothedObjective<'a> {
    pub fn new(data: &'a PoissonData, tv: SmoothedTv, lambda: f64) -> Self {
        Self { data, tv, lambda }
    }

    pub fn data(&self) -> &PoissonData {
        self.data
    }

    pub fn tv(&self) -> &SmoothedTv {
        &self.tv
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Value and gradient from a precomputed `A x`.
    pub fn value_and_gradient_from_forward(&self, x: &[f64], ax: &[f64]) -> Result<(f64, Vec<f64>)> {
        let z = self.data.denominators(ax)?;
        let kl = self.data.value_from_denominators(&z);
        let mut g = self.data.gradient_from_denominators(&z);
        let (tv, tg) = self.tv.value_and_gradient(x);
        g.iter_mut().zip(&tg).for_each(|(g, t)| *g += self.lambda * t);
        Ok((kl + self.lambda * tv, g))
    }
}

impl Objective for SmoothedObjective<'_> {
    fn dim(&self) -> usize {
        self.data.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.data.kl_value(x)? + self.lambda * self.tv.value(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ax = self.data.op().apply_vec(x);
        self.value_and_gradient_from_forward(x, &ax)
    }

    fn gradient_split(&self, z: &[f64]) -> Option<Vec<f64>> {
        let w = self.tv.irn_weights(z);
        let diag = weighted_laplacian_diagonal(self.tv.map(), &w);
        Some(split_positive_part(self.data.column_sums(), &diag, self.lambda, z))
    }

    fn ray<'b>(
        &'b self,
        x: &'b [f64],
        _fx: f64,
        _grad: &'b [f64],
        dir: &'b [f64],
    ) -> Result<Box<dyn Ray + 'b>> {
        let op = self.data.op();
        Ok(Box::new(SmoothedRay {
            obj: self,
            x,
            dir,
            ax: op.apply_vec(x),
            ad: op.apply_vec(dir),
        }))
    }
}

struct SmoothedRay<'a, 'b> {
    obj: &'a SmoothedObjective<'b>,
    x: &'a [f64],
    dir: &'a [f64],
    ax: Vec<f64>,
    ad: Vec<f64>,
}

impl SmoothedRay<'_, '_> {
    fn point(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        (add_scaled(self.x, t, self.dir), add_scaled(&self.ax, t, &self.ad))
    }
}

impl Ray for SmoothedRay<'_, '_> {
    fn value(&mut self, t: f64) -> Result<f64> {
        let (x, ax) = self.point(t);
        let z = self.obj.data.denominators(&ax)?;
        Ok(self.obj.data.value_from_denominators(&z) + self.obj.lambda * self.obj.tv.value(&x))
    }

    fn gradient(&mut self, t: f64) -> Result<Vec<f64>> {
        let (x, ax) = self.point(t);
        Ok(self.obj.value_and_gradient_from_forward(&x, &ax)?.1)
    }
}
