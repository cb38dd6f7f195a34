//! Fixed invertible transforms between images and latent grids, plus the
//! 2x down-/up-sampling operators used between cascade levels.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// Flatten each pxp patch into a feature vector.
    Patchify,
    /// Flatten and additionally apply an orthonormal 2-D DCT-II per channel.
    PatchifyDct,
}

impl TransformKind {
    pub fn code(self) -> u8 {
        match self {
            TransformKind::Patchify => 0,
            TransformKind::PatchifyDct => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TransformKind::Patchify),
            1 => Ok(TransformKind::PatchifyDct),
            c => Err(Error::Corrupt(format!("unknown transform kind {c}"))),
        }
    }
}

/// Per-channel affine normalization: latent = (sample - offset) / scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub patch: usize,
    /// One (offset, scale) pair per image channel; scale must be positive.
    pub normalization: Vec<(f64, f64)>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, patch: usize, channels: usize) -> Self {
        Self {
            kind,
            patch,
            normalization: vec![(128.0, 128.0); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.normalization.len()
    }

    /// Latent channel count produced by this transform.
    pub fn latent_channels(&self) -> usize {
        self.patch * self.patch * self.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::Config("patch size must be >= 1".into()));
        }
        if self.normalization.is_empty() {
            return Err(Error::Config(
                "normalization must cover >= 1 channel".into(),
            ));
        }
        if self.normalization.iter().any(|&(_, s)| s <= 0.0) {
            return Err(Error::Config("normalization scale must be positive".into()));
        }
        Ok(())
    }
}

/// Image -> latent grid. The image must already be divisible by the patch
/// size; call [`pad_to_multiple`] first otherwise.
pub fn analysis(image: &Image, spec: &TransformSpec) -> Result<LatentGrid> {
    spec.validate()?;
    if image.channels != spec.channels() {
        return Err(Error::Dimension(format!(
            "image has {} channels, spec expects {}",
            image.channels,
            spec.channels()
        )));
    }
    let p = spec.patch;
    if image.width == 0 || image.height == 0 {
        return Err(Error::Empty("image".into()));
    }
    if image.width % p != 0 || image.height % p != 0 {
        return Err(Error::NotDivisible {
            width: image.width,
            height: image.height,
            multiple: p,
        });
    }
    let (h, w) = (image.height / p, image.width / p);
    let n = spec.latent_channels();
    let mut grid = LatentGrid::zeros(h, w, n);
    let mut block = vec![0.0f64; p * p];
    let mut coeffs = vec![0.0f64; p * p];
    for by in 0..h {
        for bx in 0..w {
            let vec = grid.vector_mut(by * w + bx);
            for (c, &(offset, scale)) in spec.normalization.iter().enumerate() {
                for py in 0..p {
                    for px in 0..p {
                        let s = image.sample(bx * p + px, by * p + py, c) as f64;
                        block[py * p + px] = (s - offset) / scale;
                    }
                }
                let out = &mut vec[c * p * p..(c + 1) * p * p];
                match spec.kind {
                    TransformKind::Patchify => out.copy_from_slice(&block),
                    TransformKind::PatchifyDct => {
                        dct2_forward(&block, &mut coeffs, p);
                        out.copy_from_slice(&coeffs);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Latent grid -> image; exact inverse of [`analysis`] up to 8-bit rounding.
/// Rounding is half-away-from-zero, then clamp to [0, 255].
pub fn synthesis(grid: &LatentGrid, spec: &TransformSpec) -> Result<Image> {
    spec.validate()?;
    let p = spec.patch;
    if grid.n != spec.latent_channels() {
        return Err(Error::Dimension(format!(
            "grid has {} channels, spec {:?} p={} over {} image channels needs {}",
            grid.n,
            spec.kind,
            p,
            spec.channels(),
            spec.latent_channels()
        )));
    }
    let mut image = Image::zeros(grid.w * p, grid.h * p, spec.channels());
    let mut block = vec![0.0f64; p * p];
    for by in 0..grid.h {
        for bx in 0..grid.w {
            let vec = grid.vector(by * grid.w + bx);
            for (c, &(offset, scale)) in spec.normalization.iter().enumerate() {
                let coeffs = &vec[c * p * p..(c + 1) * p * p];
                let spatial: &[f64] = match spec.kind {
                    TransformKind::Patchify => coeffs,
                    TransformKind::PatchifyDct => {
                        dct2_inverse(coeffs, &mut block, p);
                        &block
                    }
                };
                for py in 0..p {
                    for px in 0..p {
                        let v = spatial[py * p + px] * scale + offset;
                        image.set_sample(bx * p + px, by * p + py, c, quantize_u8(v));
                    }
                }
            }
        }
    }
    Ok(image)
}

/// Round half away from zero, clamp to [0, 255].
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    let r = if v >= 0.0 {
        (v + 0.5).floor()
    } else {
        (v - 0.5).ceil()
    };
    r.clamp(0.0, 255.0) as u8
}

/// 2x2 average pooling per channel. Odd extents are handled by edge
/// replication, so the output is ceil(h/2) x ceil(w/2).
pub fn downsample(grid: &LatentGrid) -> LatentGrid {
    let oh = grid.h.div_ceil(2);
    let ow = grid.w.div_ceil(2);
    let mut out = LatentGrid::zeros(oh, ow, grid.n);
    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = 2 * oy;
            let x0 = 2 * ox;
            let y1 = (y0 + 1).min(grid.h - 1);
            let x1 = (x0 + 1).min(grid.w - 1);
            for c in 0..grid.n {
                let s = grid.at(y0, x0, c)
                    + grid.at(y0, x1, c)
                    + grid.at(y1, x0, c)
                    + grid.at(y1, x1, c);
                out.set(oy, ox, c, s / 4.0);
            }
        }
    }
    out
}

/// Nearest-neighbor 2x replication along both spatial axes.
pub fn upsample(grid: &LatentGrid) -> LatentGrid {
    let mut out = LatentGrid::zeros(grid.h * 2, grid.w * 2, grid.n);
    for y in 0..out.h {
        for x in 0..out.w {
            let src = (y / 2 * grid.w + x / 2) * grid.n;
            let dst = (y * out.w + x) * grid.n;
            out.values[dst..dst + grid.n].copy_from_slice(&grid.values[src..src + grid.n]);
        }
    }
    out
}

/// Original width/height, kept so the decoder can crop padding away.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OriginalDims {
    pub width: usize,
    pub height: usize,
}

/// Edge-replication padding on the right/bottom up to a multiple of
/// `multiple`. Returns the padded image and the pre-padding dimensions.
pub fn pad_to_multiple(image: &Image, multiple: usize) -> Result<(Image, OriginalDims)> {
    if multiple == 0 {
        return Err(Error::Config("padding multiple must be >= 1".into()));
    }
    let dims = OriginalDims {
        width: image.width,
        height: image.height,
    };
    let pw = image.width.div_ceil(multiple) * multiple;
    let ph = image.height.div_ceil(multiple) * multiple;
    if pw == image.width && ph == image.height {
        return Ok((image.clone(), dims));
    }
    let mut out = Image::zeros(pw, ph, image.channels);
    for y in 0..ph {
        let sy = y.min(image.height - 1);
        for x in 0..pw {
            let sx = x.min(image.width - 1);
            for c in 0..image.channels {
                out.set_sample(x, y, c, image.sample(sx, sy, c));
            }
        }
    }
    Ok((out, dims))
}

/// Crop the top-left `dims` region out of a (padded) image.
pub fn crop(image: &Image, dims: OriginalDims) -> Result<Image> {
    if dims.width > image.width || dims.height > image.height {
        return Err(Error::Dimension(format!(
            "cannot crop {}x{} out of {}x{}",
            dims.width, dims.height, image.width, image.height
        )));
    }
    if dims.width == image.width && dims.height == image.height {
        return Ok(image.clone());
    }
    let mut out = Image::zeros(dims.width, dims.height, image.channels);
    for y in 0..dims.height {
        for x in 0..dims.width {
            for c in 0..image.channels {
                out.set_sample(x, y, c, image.sample(x, y, c));
            }
        }
    }
    Ok(out)
}

/// Orthonormal 2-D DCT-II over a pxp block, separable rows-then-columns.
fn dct2_forward(block: &[f64], out: &mut [f64], p: usize) {
    let mut tmp = vec![0.0f64; p * p];
    for row in 0..p {
        dct1(
            &block[row * p..(row + 1) * p],
            &mut tmp[row * p..(row + 1) * p],
        );
    }
    let mut col_in = vec![0.0f64; p];
    let mut col_out = vec![0.0f64; p];
    for col in 0..p {
        for row in 0..p {
            col_in[row] = tmp[row * p + col];
        }
        dct1(&col_in, &mut col_out);
        for row in 0..p {
            out[row * p + col] = col_out[row];
        }
    }
}

/// Inverse of [`dct2_forward`] (DCT-III on both axes).
fn dct2_inverse(coeffs: &[f64], out: &mut [f64], p: usize) {
    let mut tmp = vec![0.0f64; p * p];
    for row in 0..p {
        idct1(
            &coeffs[row * p..(row + 1) * p],
            &mut tmp[row * p..(row + 1) * p],
        );
    }
    let mut col_in = vec![0.0f64; p];
    let mut col_out = vec![0.0f64; p];
    for col in 0..p {
        for row in 0..p {
            col_in[row] = tmp[row * p + col];
        }
        idct1(&col_in, &mut col_out);
        for row in 0..p {
            out[row * p + col] = col_out[row];
        }
    }
}

fn dct1(x: &[f64], out: &mut [f64]) {
    let p = x.len();
    let norm0 = (1.0 / p as f64).sqrt();
    let norm = (2.0 / p as f64).sqrt();
    for (u, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &v) in x.iter().enumerate() {
            acc += v
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * u as f64 / (2.0 * p as f64))
                    .cos();
        }
        *o = acc * if u == 0 { norm0 } else { norm };
    }
}

fn idct1(coeffs: &[f64], out: &mut [f64]) {
    let p = coeffs.len();
    let norm0 = (1.0 / p as f64).sqrt();
    let norm = (2.0 / p as f64).sqrt();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (u, &c) in coeffs.iter().enumerate() {
            let a = if u == 0 { norm0 } else { norm };
            acc += a
                * c
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * u as f64 / (2.0 * p as f64))
                    .cos();
        }
        *o = acc;
    }
}
