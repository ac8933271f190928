//! 2D real FFT on column-major images.
//!
//! The forward transform runs a real-to-complex FFT down every column
//! (columns are contiguous in memory), transposes, then a complex FFT across
//! the columns. Spectra are kept in that transposed layout, `[f * cols + l]`
//! with `f < rows / 2 + 1`, since pointwise products never need the natural
//! order.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            half: rows / 2 + 1,
            r2c: real.plan_fft_forward(rows),
            c2r: real.plan_fft_inverse(rows),
            row_fwd: complex.plan_fft_forward(cols),
            row_inv: complex.plan_fft_inverse(cols),
        }
    }

    /// Number of complex coefficients in a spectrum.
    pub fn spectrum_len(&self) -> usize {
        self.half * self.cols
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let (r, s, h) = (self.rows, self.cols, self.half);
        assert_eq!(x.len(), r * s);
        let mut input = x.to_vec();
        let mut cols_out = vec![Complex64::default(); h * s];
        let mut scratch = self.r2c.make_scratch_vec();
        for (col_in, col_out) in input.chunks_exact_mut(r).zip(cols_out.chunks_exact_mut(h)) {
            self.r2c
                .process_with_scratch(col_in, col_out, &mut scratch)
                .expect("column lengths match the plan");
        }
        let mut spec = vec![Complex64::default(); h * s];
        transpose(&cols_out, &mut spec, h, s);
        self.row_fwd.process(&mut spec);
        spec
    }

    /// Unnormalized inverse of [`Fft2::forward`]; the result is scaled by `rows * cols`.
    pub fn inverse_unnormalized(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let (r, s, h) = (self.rows, self.cols, self.half);
        assert_eq!(spec.len(), h * s);
        self.row_inv.process(&mut spec);
        let mut cols_in = vec![Complex64::default(); h * s];
        transpose(&spec, &mut cols_in, s, h);
        let mut out = vec![0.0; r * s];
        let mut scratch = self.c2r.make_scratch_vec();
        for (col_in, col_out) in cols_in.chunks_exact_mut(h).zip(out.chunks_exact_mut(r)) {
            // Hermitian symmetry makes these real up to round-off.
            col_in[0].im = 0.0;
            if r % 2 == 0 {
                col_in[h - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(col_in, col_out, &mut scratch)
                .expect("column lengths match the plan");
        }
        out
    }

    pub fn inverse(&self, spec: Vec<Complex64>) -> Vec<f64> {
        let n = (self.rows * self.cols) as f64;
        let mut out = self.inverse_unnormalized(spec);
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// `dst[f * cols + l] = src[l * rows + f]`, in tiles to stay cache friendly.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 8;
    for l0 in (0..cols).step_by(TILE) {
        for f0 in (0..rows).step_by(TILE) {
            let f1 = (f0 + TILE).min(rows);
            for l in l0..(l0 + TILE).min(cols) {
                let col = &src[l * rows + f0..l * rows + f1];
                for (v, d) in col.iter().zip(dst[f0 * cols + l..].iter_mut().step_by(cols)) {
                    *d = *v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64], r: usize, s: usize, f: usize, g: usize) -> Complex64 {
        let mut acc = Complex64::default();
        for l in 0..s {
            for k in 0..r {
                let phase = -2.0
                    * std::f64::consts::PI
                    * ((f * k) as f64 / r as f64 + (g * l) as f64 / s as f64);
                acc += Complex64::from_polar(x[l * r + k], phase);
            }
        }
        acc
    }

    #[test]
    fn matches_naive_dft_and_inverts() {
        for (r, s) in [(4, 6), (5, 3), (8, 8), (1, 7)] {
            let x: Vec<f64> = (0..r * s).map(|i| ((i * 37 % 11) as f64).sin()).collect();
            let fft = Fft2::new(r, s);
            let spec = fft.forward(&x);
            for f in 0..r / 2 + 1 {
                for g in 0..s {
                    let want = naive_dft(&x, r, s, f, g);
                    let got = spec[f * s + g];
                    assert!((want - got).norm() < 1e-10, "{r}x{s} ({f},{g})");
                }
            }
            let back = fft.inverse(spec);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
