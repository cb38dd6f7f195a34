//! Dense rank-3 latent grid: `h x w` positions, `n` channels per position.

use crate::error::{Error, Result};

/// Row-major grid of feature vectors. The vector at position `(y, x)` is the
/// contiguous channel slice `values[(y*w + x)*n ..][..n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub h: usize,
    pub w: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(h: usize, w: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w * n {
            return Err(Error::Dimension(format!(
                "grid {h}x{w}x{n} needs {} values, got {}",
                h * w * n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value index {i}")));
        }
        Ok(Self { h, w, n, values })
    }

    pub fn zeros(h: usize, w: usize, n: usize) -> Self {
        Self {
            h,
            w,
            n,
            values: vec![0.0; h * w * n],
        }
    }

    #[inline]
    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.n..(pos + 1) * self.n]
    }

    #[inline]
    pub fn vector_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.values[pos * self.n..(pos + 1) * self.n]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.w + x) * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.values[(y * self.w + x) * self.n + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w && self.n == other.n
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("grid subtraction shape mismatch".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            h: self.h,
            w: self.w,
            n: self.n,
            values,
        })
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("grid addition shape mismatch".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            h: self.h,
            w: self.w,
            n: self.n,
            values,
        })
    }

    /// Sum of squared values.
    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}
