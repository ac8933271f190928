//! Test problems: reference images, SNR-targeted Poisson corruption and
//! reconstruction quality metrics.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::blur::{disk_psf, gaussian_psf_full, motion_psf, BlurOperator, Psf};
use crate::error::{invalid, Error, Result};
use crate::feasible::FeasibleSet;
use crate::image::Image;
use crate::io::{load_f64img, save_f64img};
use crate::ops::dist;

/// Background emission added to every pixel of the blurred image.
pub const BACKGROUND: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomVariant {
    /// Intensities of the 1974 table.
    #[default]
    Original,
    /// Higher-contrast variant (MATLAB's default `phantom`).
    Modified,
}

// (a, b, x0, y0, phi in degrees)
const ELLIPSES: [(f64, f64, f64, f64, f64); 10] = [
    (0.69, 0.92, 0.0, 0.0, 0.0),
    (0.6624, 0.874, 0.0, -0.0184, 0.0),
    (0.11, 0.31, 0.22, 0.0, -18.0),
    (0.16, 0.41, -0.22, 0.0, 18.0),
    (0.21, 0.25, 0.0, 0.35, 0.0),
    (0.046, 0.046, 0.0, 0.1, 0.0),
    (0.046, 0.046, 0.0, -0.1, 0.0),
    (0.046, 0.023, -0.08, -0.605, 0.0),
    (0.023, 0.023, 0.0, -0.606, 0.0),
    (0.023, 0.046, 0.06, -0.605, 0.0),
];

const ORIGINAL_INTENSITY: [f64; 10] = [1.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
const MODIFIED_INTENSITY: [f64; 10] = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

/// One phantom ellipse: intensity, semi-axes, center and rotation (degrees).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (sin, cos) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * cos + dy * sin;
        let v = dy * cos - dx * sin;
        u * u / (self.a * self.a) + v * v / (self.b * self.b) <= 1.0
    }
}

pub fn phantom_ellipses(variant: PhantomVariant) -> Vec<Ellipse> {
    let amp = match variant {
        PhantomVariant::Original => &ORIGINAL_INTENSITY,
        PhantomVariant::Modified => &MODIFIED_INTENSITY,
    };
    ELLIPSES
        .iter()
        .zip(amp)
        .map(|(&(a, b, x0, y0, phi_deg), &intensity)| Ellipse {
            intensity,
            a,
            b,
            x0,
            y0,
            phi_deg,
        })
        .collect()
}

/// Coordinate of row `k` / column `l` on `[-1, 1]`; row 0 is `y = +1`.
pub fn phantom_axis(n: usize, j: usize) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    (j as f64 - c) / c
}

pub fn render_ellipses(n: usize, ellipses: &[Ellipse]) -> Image {
    Image::from_fn(n, n, |k, l| {
        let x = phantom_axis(n, l);
        let y = -phantom_axis(n, k);
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum::<f64>()
    })
}

/// Shepp-Logan phantom on an `n x n` grid.
pub fn shepp_logan(n: usize) -> Result<Image> {
    shepp_logan_variant(n, PhantomVariant::Original)
}

pub fn shepp_logan_variant(n: usize, variant: PhantomVariant) -> Result<Image> {
    if n < 32 {
        return Err(invalid("n", format!("phantom needs n >= 32, got {n}")));
    }
    // sums like 1 - 0.98 - 0.02 leave round-off around zero
    Ok(render_ellipses(n, &phantom_ellipses(variant)).map(|v| if v.abs() < 1e-12 { 0.0 } else { v }))
}

/// `beta` such that the total count `t = beta * sum(x_ref)` meets
/// `10 log10(t / sqrt(t + b_total)) = snr_db`.
pub fn snr_scale_factor(x_ref: &Image, b_total: f64, target_snr_db: f64) -> Result<f64> {
    let n0 = x_ref.sum();
    if !(n0 > 0.0) {
        return Err(Error::ZeroImage);
    }
    if !(b_total >= 0.0) {
        return Err(invalid("b_total", format!("must be nonnegative, got {b_total}")));
    }
    Ok(snr_total_counts(b_total, target_snr_db) / n0)
}

/// Total signal count giving the target SNR.
pub fn snr_total_counts(b_total: f64, snr_db: f64) -> f64 {
    let r = 10f64.powf(snr_db / 10.0);
    0.5 * (r * r + r * (r * r + 4.0 * b_total).sqrt())
}

pub fn snr_db(signal: f64, background: f64) -> f64 {
    10.0 * (signal / (signal + background).sqrt()).log10()
}

/// One Poisson draw with mean `lambda`.
pub fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        0
    } else if lambda < 30.0 {
        poisson_inversion(rng, lambda)
    } else {
        poisson_ptrd(rng, lambda)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.gen();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            // cdf stalled below u through round-off; u lies in the far tail
            break;
        }
    }
    k
}

/// Transformed rejection with squeeze (Hormann, PTRD).
fn poisson_ptrd<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + invalpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Independent Poisson counts with the given means, in column-major order.
pub fn poisson_sample(mean: &Image, seed: u64) -> Result<Image> {
    if let Some(i) = mean.as_slice().iter().position(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::NumericalDomain {
            index: i,
            value: mean.as_slice()[i],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mean.as_slice().iter().map(|&m| poisson_draw(&mut rng, m) as f64).collect();
    Image::new(mean.rows(), mean.cols(), counts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Poisson,
    /// `y = A x* + b` with no sampling.
    Noiseless,
}

/// PSF family with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurSpec {
    /// Gaussian over the whole image grid.
    Gaussian { sigma: f64 },
    Motion { len: usize, angle_deg: f64 },
    Disk { radius: f64 },
    Identity,
}

impl BlurSpec {
    pub fn psf(&self, rows: usize, cols: usize) -> Result<Psf> {
        match *self {
            BlurSpec::Gaussian { sigma } => gaussian_psf_full(rows, cols, sigma),
            BlurSpec::Motion { len, angle_deg } => motion_psf(len, angle_deg),
            BlurSpec::Disk { radius } => disk_psf(radius),
            BlurSpec::Identity => Ok(Psf::delta()),
        }
    }

    /// Starting guess used for this kind of blur in the experiments.
    pub fn default_start(&self) -> StartGuess {
        match self {
            BlurSpec::Gaussian { .. } | BlurSpec::Identity => StartGuess::Observed,
            _ => StartGuess::ConstantFlux,
        }
    }
}

/// Everything recorded about a generated problem besides the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub rows: usize,
    pub cols: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub noise: NoiseMode,
    /// Per-pixel background in the scaled domain used by the solvers.
    pub background: f64,
    /// Multiplier applied to the reference to reach the target SNR.
    pub snr_factor: f64,
    /// Divisor taking raw counts to the scaled domain (max of the counts).
    pub count_scale: f64,
    /// Total drawn counts.
    pub total_counts: f64,
    /// `sum(y - b)` in the scaled domain.
    pub flux: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<BlurSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_hint: Option<f64>,
}

impl ProblemMeta {
    /// SNR recomputed from the drawn counts.
    pub fn measured_snr(&self) -> f64 {
        let b_total = BACKGROUND * (self.rows * self.cols) as f64;
        snr_db(self.total_counts - b_total, b_total)
    }
}

/// A scaled problem ready for the solvers.
#[derive(Clone, Debug)]
pub struct TestProblem {
    pub ground_truth: Image,
    pub observed: Image,
    pub psf: Psf,
    pub operator: BlurOperator,
    pub meta: ProblemMeta,
}

/// Scales `reference` to the target SNR, blurs it, adds the background,
/// draws Poisson counts and scales counts and ground truth by the largest
/// count. In noiseless mode `snr_db` may be infinite (no pre-scaling).
pub fn make_problem(
    reference: &Image,
    psf: &Psf,
    snr_db: f64,
    seed: u64,
    noise: NoiseMode,
) -> Result<TestProblem> {
    let (rows, cols) = reference.shape();
    if reference.as_slice().iter().any(|&v| !(v >= 0.0)) {
        return Err(invalid("reference", "intensities must be nonnegative"));
    }
    let n = rows * cols;
    let operator = BlurOperator::new(rows, cols, psf)?;
    let b_total = BACKGROUND * n as f64;
    let snr_factor = if snr_db.is_infinite() && noise == NoiseMode::Noiseless {
        1.0
    } else if snr_db.is_finite() {
        snr_scale_factor(reference, b_total, snr_db)?
    } else {
        return Err(invalid("snr", "must be finite for Poisson noise"));
    };
    let x_scaled = reference.scaled(snr_factor);
    let blurred = operator.apply(&x_scaled)?;

    let (observed, ground_truth, count_scale, total_counts) = match noise {
        NoiseMode::Poisson => {
            let counts = poisson_sample(&blurred.map(|v| v.max(0.0) + BACKGROUND), seed)?;
            let total = counts.sum();
            let (y, scale) = counts.scale_to_unit_max()?;
            (y, x_scaled.scaled(1.0 / scale), scale, total)
        }
        NoiseMode::Noiseless => {
            let scale = blurred.max();
            if !(scale > 0.0) {
                return Err(Error::ZeroImage);
            }
            let truth = x_scaled.scaled(1.0 / scale);
            let y = operator.apply(&truth)?.map(|v| v + BACKGROUND);
            let total = blurred.sum() + b_total;
            (y, truth, scale, total)
        }
    };
    let flux = observed.as_slice().iter().map(|v| v - BACKGROUND).sum();
    Ok(TestProblem {
        ground_truth,
        observed,
        psf: psf.clone(),
        operator,
        meta: ProblemMeta {
            rows,
            cols,
            snr_db,
            seed,
            noise,
            background: BACKGROUND,
            snr_factor,
            count_scale,
            total_counts,
            flux,
            blur: None,
            lambda_hint: None,
        },
    })
}

/// How the starting point of a solve is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartGuess {
    /// The scaled observation `y`.
    #[default]
    Observed,
    /// Every pixel equal to `flux / n`.
    ConstantFlux,
}

impl TestProblem {
    pub fn poisson_data(&self) -> Result<crate::kl::PoissonData> {
        crate::kl::PoissonData::with_constant_background(
            &self.observed,
            self.meta.background,
            self.operator.clone(),
        )
    }

    /// `S1` or `S2` with the flux recorded at generation.
    pub fn feasible_set(&self, flux_constraint: bool) -> Result<FeasibleSet> {
        if flux_constraint {
            FeasibleSet::nonneg_flux(self.meta.flux)
        } else {
            Ok(FeasibleSet::Nonneg)
        }
    }

    /// Starting point projected onto `set`.
    pub fn start(&self, rule: StartGuess, set: &FeasibleSet) -> Vec<f64> {
        let raw = match rule {
            StartGuess::Observed => self.observed.to_vector(),
            StartGuess::ConstantFlux => {
                let n = self.observed.len();
                vec![self.meta.flux / n as f64; n]
            }
        };
        set.project(&raw)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_f64img(dir.join("ground_truth.f64img"), &self.ground_truth)?;
        save_f64img(dir.join("observed.f64img"), &self.observed)?;
        self.psf.save(dir.join("psf.f64img"))?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ground_truth = load_f64img(dir.join("ground_truth.f64img"))?;
        let observed = load_f64img(dir.join("observed.f64img"))?;
        ground_truth.check_same_shape(&observed)?;
        let psf = Psf::load(dir.join("psf.f64img"))?;
        let meta: ProblemMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        if (meta.rows, meta.cols) != observed.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", meta.rows, meta.cols),
                got: format!("{}x{}", observed.rows(), observed.cols()),
            });
        }
        let operator = BlurOperator::new(meta.rows, meta.cols, &psf)?;
        Ok(Self {
            ground_truth,
            observed,
            psf,
            operator,
            meta,
        })
    }
}

/// `||x - x*|| / ||x*||`
pub fn relative_error(x: &Image, x_star: &Image) -> Result<f64> {
    x.check_same_shape(x_star)?;
    relative_error_vec(x.as_slice(), x_star.as_slice())
}

pub fn relative_error_vec(x: &[f64], x_star: &[f64]) -> Result<f64> {
    crate::error::check_len(x_star.len(), x.len())?;
    let n = crate::ops::norm(x_star);
    if n == 0.0 {
        return Err(Error::ZeroImage);
    }
    Ok(dist(x, x_star) / n)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D factor of the separable Gaussian SSIM window.
pub fn ssim_window_1d() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, w) in w.iter_mut().enumerate() {
        let t = i as f64 - c;
        *w = (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Correlation with the window over the valid region (no padding).
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (vr, vc) = (rows + 1 - SSIM_WINDOW, cols + 1 - SSIM_WINDOW);
    // down the columns first
    let mut tmp = vec![0.0; vr * cols];
    for l in 0..cols {
        let col = &img[l * rows..(l + 1) * rows];
        for k in 0..vr {
            tmp[l * vr + k] = w.iter().zip(&col[k..k + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; vr * vc];
    for l in 0..vc {
        for k in 0..vr {
            out[l * vr + k] = (0..SSIM_WINDOW).map(|j| w[j] * tmp[(l + j) * vr + k]).sum();
        }
    }
    out
}

/// Mean structural similarity over the valid region, with dynamic range
/// `max(x*) - min(x*)`.
pub fn mssim(x: &Image, x_star: &Image) -> Result<f64> {
    x.check_same_shape(x_star)?;
    let (rows, cols) = x.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(invalid(
            "image",
            format!("MSSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {rows}x{cols}"),
        ));
    }
    let range = x_star.max() - x_star.min();
    if !(range > 0.0) {
        return Err(invalid("x_star", "dynamic range is zero"));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = ssim_window_1d();
    let (a, b) = (x.as_slice(), x_star.as_slice());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect() };
    let mu1 = filter_valid(a, rows, cols, &w);
    let mu2 = filter_valid(b, rows, cols, &w);
    let s11 = filter_valid(&prod(&|p, _| p * p), rows, cols, &w);
    let s22 = filter_valid(&prod(&|_, q| q * q), rows, cols, &w);
    let s12 = filter_valid(&prod(&|p, q| p * q), rows, cols, &w);
    let mut total = 0.0;
    for i in 0..mu1.len() {
        let (m1, m2) = (mu1[i], mu2[i]);
        let v1 = s11[i] - m1 * m1;
        let v2 = s22[i] - m2 * m2;
        let cov = s12[i] - m1 * m2;
        total += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2))
            / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
    }
    Ok(total / mu1.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rel_error: f64,
    pub mssim: f64,
    /// `sum(x) / sum(x*)`
    pub flux_ratio: f64,
}

pub fn metric_report(x: &Image, x_star: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        rel_error: relative_error(x, x_star)?,
        mssim: mssim(x, x_star)?,
        flux_ratio: x.sum() / x_star.sum(),
    })
}
