//! Discrete isotropic total variation with periodic boundaries, its Huber
//! smoothing and the iteratively reweighted quadratic model.
//!
//! `D_i x = (x[k+1, l] - x[k, l], x[k, l+1] - x[k, l])` with indices wrapping.

use crate::error::{check_len, invalid, Result};
use crate::image::{Image, PixelIndexMap};

/// Forward differences `(vertical, horizontal)` at every pixel.
pub fn differences(map: &PixelIndexMap, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (r, s) = (map.rows, map.cols);
    let n = r * s;
    debug_assert_eq!(x.len(), n);
    let mut dv = vec![0.0; n];
    let mut dh = vec![0.0; n];
    for l in 0..s {
        let col = l * r;
        let next_col = if l + 1 == s { 0 } else { col + r };
        for k in 0..r {
            let i = col + k;
            let down = if k + 1 == r { col } else { i + 1 };
            dv[i] = x[down] - x[i];
            dh[i] = x[next_col + k] - x[i];
        }
    }
    (dv, dh)
}

/// `sum_i D_i^T (pv_i, ph_i)`.
pub fn differences_adjoint(map: &PixelIndexMap, pv: &[f64], ph: &[f64]) -> Vec<f64> {
    let (r, s) = (map.rows, map.cols);
    let n = r * s;
    let mut out = vec![0.0; n];
    for l in 0..s {
        let col = l * r;
        let next_col = if l + 1 == s { 0 } else { col + r };
        for k in 0..r {
            let i = col + k;
            let down = if k + 1 == r { col } else { i + 1 };
            out[i] -= pv[i] + ph[i];
            out[down] += pv[i];
            out[next_col + k] += ph[i];
        }
    }
    out
}

/// `sum_i w_i D_i^T D_i v`.
pub fn weighted_laplacian(map: &PixelIndexMap, w: &[f64], v: &[f64]) -> Vec<f64> {
    let (r, s) = (map.rows, map.cols);
    let n = r * s;
    assert!(w.len() == n && v.len() == n);
    let mut out = vec![0.0; n];
    for l in 0..s {
        let col = l * r;
        let prev_col = if l == 0 { n - r } else { col - r };
        let next_col = if l + 1 == s { 0 } else { col + r };
        let (vc, wc) = (&v[col..col + r], &w[col..col + r]);
        let (vr, vl, wl) = (&v[next_col..next_col + r], &v[prev_col..prev_col + r], &w[prev_col..prev_col + r]);
        let oc = &mut out[col..col + r];
        for k in 0..r {
            let down = if k + 1 == r { 0 } else { k + 1 };
            let up = if k == 0 { r - 1 } else { k - 1 };
            // pixel k is the base of difference k, the lower end of difference
            // `up` and the right end of difference k in the previous column
            oc[k] = wc[k] * (2.0 * vc[k] - vc[down] - vr[k])
                + wc[up] * (vc[k] - vc[up])
                + wl[k] * (vc[k] - vl[k]);
        }
    }
    out
}

/// Diagonal of `sum_i w_i D_i^T D_i`.
pub fn weighted_laplacian_diagonal(map: &PixelIndexMap, w: &[f64]) -> Vec<f64> {
    let (r, s) = (map.rows, map.cols);
    let mut out: Vec<f64> = w.iter().map(|w| 2.0 * w).collect();
    for l in 0..s {
        let col = l * r;
        let next_col = if l + 1 == s { 0 } else { col + r };
        for k in 0..r {
            let i = col + k;
            let down = if k + 1 == r { col } else { i + 1 };
            out[down] += w[i];
            out[next_col + k] += w[i];
        }
    }
    out
}

fn gradient_norms(map: &PixelIndexMap, x: &[f64]) -> Vec<f64> {
    let (dv, dh) = differences(map, x);
    dv.iter().zip(&dh).map(|(a, b)| a.hypot(*b)).collect()
}

/// `TV(x) = sum_i ||D_i x||`.
pub fn tv_value(x: &Image) -> f64 {
    let map = PixelIndexMap::new(x.rows(), x.cols());
    gradient_norms(&map, x.as_slice()).iter().sum()
}

/// Huber-like function: `|z|` beyond `mu`, `(z^2/mu + mu)/2` inside.
#[inline]
pub fn huber(z: f64, mu: f64) -> f64 {
    let a = z.abs();
    if a > mu {
        a
    } else {
        0.5 * (z * z / mu + mu)
    }
}

/// Factor multiplying `D_i^T D_i x` in the gradient of `huber(||D_i x||)`.
#[inline]
pub fn huber_derivative_factor(norm: f64, mu: f64) -> f64 {
    1.0 / norm.max(mu)
}

/// Huber-smoothed TV on a fixed grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothedTv {
    map: PixelIndexMap,
    mu: f64,
}

impl SmoothedTv {
    pub fn new(rows: usize, cols: usize, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(invalid("mu", format!("must be positive, got {mu}")));
        }
        Ok(Self {
            map: PixelIndexMap::new(rows, cols),
            mu,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn map(&self) -> &PixelIndexMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.rows * self.map.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        gradient_norms(&self.map, x)
            .into_iter()
            .map(|z| huber(z, self.mu))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (mut dv, mut dh) = differences(&self.map, x);
        for (a, b) in dv.iter_mut().zip(dh.iter_mut()) {
            let f = huber_derivative_factor(a.hypot(*b), self.mu);
            *a *= f;
            *b *= f;
        }
        differences_adjoint(&self.map, &dv, &dh)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (mut dv, mut dh) = differences(&self.map, x);
        let mut value = 0.0;
        for (a, b) in dv.iter_mut().zip(dh.iter_mut()) {
            let z = a.hypot(*b);
            value += huber(z, self.mu);
            let f = huber_derivative_factor(z, self.mu);
            *a *= f;
            *b *= f;
        }
        (value, differences_adjoint(&self.map, &dv, &dh))
    }

    /// IRN weights at `anchor`: `1/||D_i x||` above `mu`, `1/mu` otherwise.
    pub fn irn_weights(&self, anchor: &[f64]) -> Vec<f64> {
        gradient_norms(&self.map, anchor)
            .into_iter()
            .map(|z| if z > self.mu { 1.0 / z } else { 1.0 / self.mu })
            .collect()
    }

    pub fn build_model(&self, anchor: &[f64]) -> Result<TvQuadraticModel> {
        check_len(self.len(), anchor.len())?;
        Ok(TvQuadraticModel {
            map: self.map,
            weights: self.irn_weights(anchor),
            constant: 0.5 * self.value(anchor),
        })
    }
}

/// `1/2 sum_i w_i ||D_i x||^2 + 1/2 TV_mu(x_k)`.
#[derive(Clone, Debug)]
pub struct TvQuadraticModel {
    map: PixelIndexMap,
    weights: Vec<f64>,
    constant: f64,
}

impl TvQuadraticModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn map(&self) -> &PixelIndexMap {
        &self.map
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (dv, dh) = differences(&self.map, x);
        let quad: f64 = dv
            .iter()
            .zip(&dh)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a * a + b * b))
            .sum();
        0.5 * quad + self.constant
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.hessian_vec(x)
    }

    /// `sum_i w_i D_i^T D_i v`; constant in the point of evaluation.
    pub fn hessian_vec(&self, v: &[f64]) -> Vec<f64> {
        weighted_laplacian(&self.map, &self.weights, v)
    }
}
