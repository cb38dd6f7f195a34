//! Distortion and rate-curve metrics: PSNR, multi-scale SSIM with decibel
//! conversion, and Bjontegaard-delta rate between R-D sweeps.

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 99.0;

/// One observation on a rate-distortion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
    pub msssim: f64,
    pub msssim_db: f64,
}

/// Mean squared error over all samples of two equal-shaped images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::Dimension(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let total: f64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(total / a.samples.len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at 99 so identical images stay
/// finite in CSV output.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / err).log10()).min(PSNR_CAP_DB))
}

/// Convert a [0, 1) similarity to decibels: -10 log10(1 - v). Values at or
/// above one are capped at 99 dB.
pub fn db_convert(v: f64) -> f64 {
    if v >= 1.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * (1.0 - v).log10()).min(PSNR_CAP_DB)
}

/// Multi-scale SSIM result. `scales` is 5 for images of at least 176 pixels
/// on the short side and shrinks for smaller inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsimScore {
    pub value: f64,
    pub scales: usize,
}

const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Multi-scale SSIM with the standard 11-tap Gaussian window and per-scale
/// weights. Multi-channel images are averaged over channels.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<MsSsimScore> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::Dimension("ms-ssim image shapes differ".into()));
    }
    let scales = usable_scales(a.width.min(a.height));
    if scales == 0 {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than the {}-tap ssim window",
            a.width, a.height, SSIM_WINDOW
        )));
    }
    let mut acc = 0.0;
    for c in 0..a.channels {
        acc += ms_ssim_plane(
            &extract_plane(a, c),
            &extract_plane(b, c),
            a.width,
            a.height,
            scales,
        );
    }
    Ok(MsSsimScore {
        value: acc / a.channels as f64,
        scales,
    })
}

fn usable_scales(min_dim: usize) -> usize {
    let mut d = min_dim;
    if d < SSIM_WINDOW {
        return 0;
    }
    let mut s = 1;
    while s < 5 && d / 2 >= SSIM_WINDOW {
        d /= 2;
        s += 1;
    }
    s
}

fn extract_plane(img: &Image, c: usize) -> Vec<f64> {
    (0..img.width * img.height)
        .map(|i| img.samples[i * img.channels + c] as f64)
        .collect()
}

fn ms_ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, scales: usize) -> f64 {
    let weights = &MSSSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let mut pa = a.to_vec();
    let mut pb = b.to_vec();
    let (mut pw, mut ph) = (w, h);
    let mut value = 1.0f64;
    for (s, &weight) in weights.iter().enumerate() {
        let (mean_ssim, mean_cs) = ssim_scale(&pa, &pb, pw, ph);
        let term = if s + 1 == scales { mean_ssim } else { mean_cs };
        value *= term.max(0.0).powf(weight / wsum);
        if s + 1 < scales {
            let (na, nw, nh) = half_plane(&pa, pw, ph);
            let (nb, _, _) = half_plane(&pb, pw, ph);
            pa = na;
            pb = nb;
            pw = nw;
            ph = nh;
        }
    }
    value
}

/// Mean SSIM and mean contrast-structure over all valid window positions.
fn ssim_scale(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    let c1 = (0.01 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03 * 255.0) * (0.03 * 255.0);
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);

    let mu_a = separable_valid(a, w, h, &kernel);
    let mu_b = separable_valid(b, w, h, &kernel);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_aa = separable_valid(&aa, w, h, &kernel);
    let e_bb = separable_valid(&bb, w, h, &kernel);
    let e_ab = separable_valid(&ab, w, h, &kernel);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    let n = mu_a.len() as f64;
    (ssim_sum / n, cs_sum / n)
}

fn gaussian_kernel(taps: usize, sigma: f64) -> Vec<f64> {
    let mid = (taps / 2) as f64;
    let mut k: Vec<f64> = (0..taps)
        .map(|i| (-((i as f64 - mid) * (i as f64 - mid)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution; output is (w-taps+1) x (h-taps+1).
fn separable_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let taps = kernel.len();
    let ow = w - taps + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + x + t];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let oh = h - taps + 1;
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// 2x2 average pooling with floor dimensions (odd edges dropped).
fn half_plane(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (plane[2 * y * w + 2 * x]
                    + plane[2 * y * w + 2 * x + 1]
                    + plane[(2 * y + 1) * w + 2 * x]
                    + plane[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, ow, oh)
}

/// Bjontegaard delta rate between two curves of (bpp, quality) points:
/// the average percent rate change of `b` relative to `a` at equal quality.
/// Needs at least four points per curve and overlapping quality ranges.
pub fn bd_rate(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.len() < 4 || b.len() < 4 {
        return Err(Error::Config(format!(
            "bd-rate needs >= 4 points per curve, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let qa: Vec<f64> = a.iter().map(|p| p.1).collect();
    let qb: Vec<f64> = b.iter().map(|p| p.1).collect();
    let lo = fmin(&qa).max(fmin(&qb));
    let hi = fmax(&qa).min(fmax(&qb));
    if !(hi > lo) {
        return Err(Error::Config(
            "bd-rate curves have no overlapping quality range".into(),
        ));
    }
    let fit_a = CubicFit::fit(a)?;
    let fit_b = CubicFit::fit(b)?;
    let avg_a = fit_a.mean_over(lo, hi);
    let avg_b = fit_b.mean_over(lo, hi);
    Ok((10f64.powf(avg_b - avg_a) - 1.0) * 100.0)
}

fn fmin(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn fmax(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Least-squares cubic of log10(rate) against quality, fitted on a centered
/// and scaled abscissa for conditioning.
struct CubicFit {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl CubicFit {
    fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.iter().any(|&(r, _)| !(r > 0.0)) {
            return Err(Error::Config("bd-rate needs positive rates".into()));
        }
        let q: Vec<f64> = points.iter().map(|p| p.1).collect();
        let center = q.iter().sum::<f64>() / q.len() as f64;
        let scale = q
            .iter()
            .map(|v| (v - center).abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let mut ata = [[0.0f64; 4]; 4];
        let mut aty = [0.0f64; 4];
        for &(rate, quality) in points {
            let u = (quality - center) / scale;
            let row = [1.0, u, u * u, u * u * u];
            let y = rate.log10();
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += row[i] * row[j];
                }
                aty[i] += row[i] * y;
            }
        }
        let coeffs = solve4(ata, aty)?;
        Ok(Self {
            coeffs,
            center,
            scale,
        })
    }

    /// Average of the fitted polynomial over [lo, hi] in quality units.
    fn mean_over(&self, lo: f64, hi: f64) -> f64 {
        let ulo = (lo - self.center) / self.scale;
        let uhi = (hi - self.center) / self.scale;
        let anti = |u: f64| {
            self.coeffs[0] * u
                + self.coeffs[1] * u * u / 2.0
                + self.coeffs[2] * u * u * u / 3.0
                + self.coeffs[3] * u * u * u * u / 4.0
        };
        (anti(uhi) - anti(ulo)) / (uhi - ulo)
    }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut y: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Config(
                "bd-rate fit is singular (degenerate quality values)".into(),
            ));
        }
        a.swap(col, pivot);
        y.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            y[row] -= f * y[col];
        }
    }
    let mut x = [0.0f64; 4];
    for col in (0..4).rev() {
        let mut acc = y[col];
        for k in col + 1..4 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Jackknife standard error of the mean: the spread of leave-one-out means
/// scaled by (n-1)/n.
pub fn jackknife_se(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Config("jackknife needs at least two values".into()));
    }
    let total: f64 = values.iter().sum();
    let loo: Vec<f64> = values
        .iter()
        .map(|v| (total - v) / (n - 1) as f64)
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / n as f64;
    let ss: f64 = loo.iter().map(|m| (m - loo_mean) * (m - loo_mean)).sum();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}
