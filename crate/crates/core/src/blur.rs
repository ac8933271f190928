//! Point spread functions and the periodic blurring operator `A`.

use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::Fft2;
use crate::image::Image;

/// Tolerance on the PSF normalization `sum(kernel) = 1`.
pub const PSF_SUM_TOL: f64 = 1e-12;

/// A nonnegative, unit-sum kernel with odd support; its center is the
/// middle pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Psf {
    kernel: Image,
}

impl Psf {
    /// Wraps a kernel, normalizing it to unit sum.
    pub fn from_kernel(kernel: Image) -> Result<Self> {
        if kernel.rows().is_multiple_of(2) || kernel.cols().is_multiple_of(2) {
            return Err(invalid(
                "kernel",
                format!("support must be odd, got {}x{}", kernel.rows(), kernel.cols()),
            ));
        }
        if kernel.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid("kernel", "entries must be finite and nonnegative"));
        }
        let total = kernel.sum();
        if !(total > 0.0) {
            return Err(invalid("kernel", "kernel has zero mass"));
        }
        Ok(Self {
            kernel: kernel.map(|v| v / total),
        })
    }

    pub fn delta() -> Self {
        Self {
            kernel: Image::filled(1, 1, 1.0),
        }
    }

    pub fn kernel(&self) -> &Image {
        &self.kernel
    }

    /// (row, col) of the kernel center.
    pub fn center(&self) -> (usize, usize) {
        (self.kernel.rows() / 2, self.kernel.cols() / 2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::save_f64img(path, &self.kernel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kernel(crate::io::load_f64img(path)?)
    }
}

/// Gaussian PSF on a `size x size` support.
pub fn gaussian_psf(size: usize, sigma: f64) -> Result<Psf> {
    if size < 3 {
        return Err(invalid("size", format!("must be at least 3, got {size}")));
    }
    gaussian_psf_rect(size, size, sigma)
}

/// Gaussian PSF `exp(-(dk^2 + dl^2) / (2 sigma^2))` on an odd `rows x cols` support.
pub fn gaussian_psf_rect(rows: usize, cols: usize, sigma: f64) -> Result<Psf> {
    if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
        return Err(invalid(
            "size",
            format!("support must be odd, got {rows}x{cols}"),
        ));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let (ck, cl) = ((rows / 2) as f64, (cols / 2) as f64);
    let two_var = 2.0 * sigma * sigma;
    let kernel = Image::from_fn(rows, cols, |k, l| {
        let dk = k as f64 - ck;
        let dl = l as f64 - cl;
        (-(dk * dk + dl * dl) / two_var).exp()
    });
    Psf::from_kernel(kernel)
}

/// Gaussian PSF spanning (almost) a whole `rows x cols` image: the largest odd
/// support that fits.
pub fn gaussian_psf_full(rows: usize, cols: usize, sigma: f64) -> Result<Psf> {
    let odd = |n: usize| if n % 2 == 1 { n } else { n - 1 };
    gaussian_psf_rect(odd(rows), odd(cols), sigma)
}

/// Samples per unit length used to rasterize motion blur.
pub const MOTION_SUPERSAMPLING: usize = 64;

/// Linear motion blur of length `len` pixels along `angle_deg`
/// (counter-clockwise from the horizontal axis, rows pointing down).
///
/// The segment `[-len/2, len/2]` is sampled at `64 * len` evenly spaced
/// midpoints and every sample is deposited on the pixel that contains it.
pub fn motion_psf(len: usize, angle_deg: f64) -> Result<Psf> {
    if len == 0 {
        return Err(invalid("len", "must be at least 1"));
    }
    if !angle_deg.is_finite() {
        return Err(invalid("angle", "must be finite"));
    }
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let samples = MOTION_SUPERSAMPLING * len;
    let half_len = len as f64 / 2.0;
    let step = len as f64 / samples as f64;

    let mut hits = Vec::with_capacity(samples);
    let (mut rk, mut rl) = (0i64, 0i64);
    for i in 0..samples {
        let t = -half_len + (i as f64 + 0.5) * step;
        let dk = (-t * sin).round() as i64;
        let dl = (t * cos).round() as i64;
        rk = rk.max(dk.abs());
        rl = rl.max(dl.abs());
        hits.push((dk, dl));
    }
    let rows = (2 * rk + 1) as usize;
    let cols = (2 * rl + 1) as usize;
    let mut kernel = Image::zeros(rows, cols);
    for (dk, dl) in hits {
        let k = (dk + rk) as usize;
        let l = (dl + rl) as usize;
        kernel.set(k, l, kernel.get(k, l) + 1.0);
    }
    Psf::from_kernel(kernel)
}

/// Sub-pixel grid used for pixels cut by the disk boundary.
pub const DISK_SUPERSAMPLING: usize = 33;

/// Out-of-focus (uniform disk) PSF: each entry is the fraction of the pixel
/// covered by a disk of the given radius centered on the middle pixel.
pub fn disk_psf(radius: f64) -> Result<Psf> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid("radius", format!("must be positive, got {radius}")));
    }
    let half = (radius - 0.5).ceil().max(0.0) as usize;
    let size = 2 * half + 1;
    let c = half as f64;
    let r2 = radius * radius;
    let kernel = Image::from_fn(size, size, |k, l| {
        pixel_disk_coverage(k as f64 - c, l as f64 - c, radius, r2)
    });
    Psf::from_kernel(kernel)
}

fn pixel_disk_coverage(dy: f64, dx: f64, radius: f64, r2: f64) -> f64 {
    let (ax, ay) = (dx.abs(), dy.abs());
    let far = (ax + 0.5).powi(2) + (ay + 0.5).powi(2);
    if far <= r2 {
        return 1.0;
    }
    let nx = (ax - 0.5).max(0.0);
    let ny = (ay - 0.5).max(0.0);
    if (nx * nx + ny * ny).sqrt() >= radius {
        return 0.0;
    }
    let m = DISK_SUPERSAMPLING;
    let mut inside = 0usize;
    for i in 0..m {
        let y = dy - 0.5 + (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let x = dx - 0.5 + (j as f64 + 0.5) / m as f64;
            if x * x + y * y <= r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (m * m) as f64
}

/// Periodic convolution with a PSF, realized through a cached optical
/// transfer function.
#[derive(Clone, Debug)]
pub struct BlurOperator {
    rows: usize,
    cols: usize,
    fft: Fft2,
    otf: Vec<Complex64>,
}

impl BlurOperator {
    pub fn new(rows: usize, cols: usize, psf: &Psf) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("dimensions", "must be positive"));
        }
        let (ck, cl) = psf.center();
        let kernel = psf.kernel();
        let mut padded = Image::zeros(rows, cols);
        for q in 0..kernel.cols() {
            for p in 0..kernel.rows() {
                // circular shift so that the kernel center lands on (0, 0)
                let k = (p as isize - ck as isize).rem_euclid(rows as isize) as usize;
                let l = (q as isize - cl as isize).rem_euclid(cols as isize) as usize;
                padded.set(k, l, padded.get(k, l) + kernel.get(p, q));
            }
        }
        let fft = Fft2::new(rows, cols);
        let otf = fft.forward(padded.as_slice());
        Ok(Self {
            rows,
            cols,
            fft,
            otf,
        })
    }

    pub fn identity(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, &Psf::delta()).expect("delta psf is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// OTF in the transposed spectrum layout of [`Fft2`].
    pub fn otf(&self) -> &[Complex64] {
        &self.otf
    }

    /// `A x` on a flat column-major vector.
    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, false)
    }

    /// `A^T y` on a flat column-major vector.
    pub fn apply_adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        self.filter(y, true)
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        Image::new(self.rows, self.cols, self.apply_vec(x.as_slice()))
    }

    pub fn apply_adjoint(&self, y: &Image) -> Result<Image> {
        self.check(y)?;
        Image::new(self.rows, self.cols, self.apply_adjoint_vec(y.as_slice()))
    }

    fn filter(&self, x: &[f64], conjugate: bool) -> Vec<f64> {
        assert_eq!(x.len(), self.len(), "vector length does not match operator");
        let mut spec = self.fft.forward(x);
        let scale = 1.0 / self.len() as f64;
        if conjugate {
            spec.iter_mut()
                .zip(&self.otf)
                .for_each(|(s, h)| *s *= h.conj() * scale);
        } else {
            spec.iter_mut().zip(&self.otf).for_each(|(s, h)| *s *= h * scale);
        }
        self.fft.inverse_unnormalized(spec)
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.shape() == (self.rows, self.cols) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", x.rows(), x.cols()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::dot;

    #[test]
    fn gaussian_rejects_bad_parameters() {
        assert!(gaussian_psf(4, 1.0).is_err());
        assert!(gaussian_psf(5, 0.0).is_err());
        assert!(gaussian_psf(5, -1.0).is_err());
        assert!(gaussian_psf(1, 1.0).is_err());
    }

    #[test]
    fn gaussian_radial_decay() {
        let psf = gaussian_psf(3, 1.0).unwrap();
        let k = psf.kernel();
        assert!(k.get(1, 1) > k.get(0, 1));
        assert!(k.get(0, 1) > k.get(0, 0));
        assert_eq!(k.get(0, 1), k.get(1, 0));
        assert!((k.sum() - 1.0).abs() < PSF_SUM_TOL);
    }

    #[test]
    fn gaussian_small_sigma_is_a_delta() {
        let psf = gaussian_psf(5, 1e-6).unwrap();
        assert!((psf.kernel().get(2, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn motion_degenerate_and_axis_aligned() {
        for angle in [0.0, 17.0, 45.0, 90.0, 200.0] {
            let psf = motion_psf(1, angle).unwrap();
            assert_eq!(psf.kernel().shape(), (1, 1));
        }
        let psf = motion_psf(5, 0.0).unwrap();
        assert_eq!(psf.kernel().shape(), (1, 5));
        for &v in psf.kernel().as_slice() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert!(motion_psf(0, 0.0).is_err());
    }

    #[test]
    fn disk_small_radius_and_symmetry() {
        let psf = disk_psf(0.4).unwrap();
        assert_eq!(psf.kernel().as_slice(), &[1.0]);
        let psf = disk_psf(2.7).unwrap();
        let k = psf.kernel();
        let n = k.rows();
        for p in 0..n {
            for q in 0..n {
                let v = k.get(p, q);
                assert_eq!(v, k.get(q, n - 1 - p), "rotation");
                assert_eq!(v, k.get(n - 1 - p, q), "vertical reflection");
                assert_eq!(v, k.get(p, n - 1 - q), "horizontal reflection");
            }
        }
        assert!(disk_psf(0.0).is_err());
    }

    #[test]
    fn delta_psf_gives_identity() {
        let op = BlurOperator::identity(5, 4);
        let x = Image::from_fn(5, 4, |k, l| (k * 7 + l * 3) as f64 * 0.37);
        let y = op.apply(&x).unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_of_delta_image_reproduces_psf() {
        let psf = gaussian_psf_rect(3, 5, 0.8).unwrap();
        let op = BlurOperator::new(7, 9, &psf).unwrap();
        let mut delta = Image::zeros(7, 9);
        delta.set(3, 4, 1.0);
        let out = op.apply(&delta).unwrap();
        for p in 0..3 {
            for q in 0..5 {
                let got = out.get(3 + p - 1, 4 + q - 2);
                assert!((got - psf.kernel().get(p, q)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let op = BlurOperator::new(8, 6, &motion_psf(5, 30.0).unwrap()).unwrap();
        let out = op.apply(&Image::filled(8, 6, 2.5)).unwrap();
        for &v in out.as_slice() {
            assert!((v - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_identity_on_random_pair() {
        let op = BlurOperator::new(8, 8, &gaussian_psf(5, 1.3).unwrap()).unwrap();
        let x: Vec<f64> = (0..64).map(|i| ((i * 13 % 17) as f64).cos()).collect();
        let y: Vec<f64> = (0..64).map(|i| ((i * 7 % 19) as f64).sin()).collect();
        let lhs = dot(&op.apply_vec(&x), &y);
        let rhs = dot(&x, &op.apply_adjoint_vec(&y));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = BlurOperator::identity(4, 4);
        assert!(op.apply(&Image::zeros(4, 5)).is_err());
        assert!(op.apply_adjoint(&Image::zeros(3, 4)).is_err());
    }
}
