//! Multi-codebook storage and single-level quantization: pairwise squared
//! distances, hard (greedy) and stochastic (Gumbel) assignment, and O(1)
//! dequantization.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

const CODEBOOK_MAGIC: [u8; 4] = *b"MCQB";
const CODEBOOK_VERSION: u8 = 1;

/// One K x d codeword table.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    /// Row-major K x d entries.
    pub rows: Vec<f64>,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != k * dim {
            return Err(Error::Dimension(format!(
                "codebook {k}x{dim} needs {} entries, got {}",
                k * dim,
                rows.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        Ok(Self { k, dim, rows })
    }

    pub fn zeros(k: usize, dim: usize) -> Self {
        Self {
            k,
            dim,
            rows: vec![0.0; k * dim],
        }
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.rows[k * self.dim..(k + 1) * self.dim]
    }
}

/// Per-level, per-group codeword tables. Level `l` holds `M` sub-codebooks of
/// `K_l` codewords each; a latent vector of `n = M*d` channels is quantized
/// group by group against contiguous channel slices.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCodebook {
    pub groups: usize,
    pub dim: usize,
    /// `tables[level][group]`, all tables at one level sharing K_l.
    pub tables: Vec<Vec<Codebook>>,
}

impl MultiCodebook {
    pub fn new(tables: Vec<Vec<Codebook>>) -> Result<Self> {
        if tables.is_empty() || tables[0].is_empty() {
            return Err(Error::Empty("codebook tables".into()));
        }
        let groups = tables[0].len();
        let dim = tables[0][0].dim;
        for (l, level) in tables.iter().enumerate() {
            if level.len() != groups {
                return Err(Error::Config(format!(
                    "level {l} has {} groups, expected {groups}",
                    level.len()
                )));
            }
            let k = level[0].k;
            for book in level {
                if book.dim != dim {
                    return Err(Error::Config("inconsistent codeword dim".into()));
                }
                if book.k != k {
                    return Err(Error::Config(format!(
                        "level {l} mixes codebook sizes {k} and {}",
                        book.k
                    )));
                }
                if book.k == 0 {
                    return Err(Error::Config("empty codebook".into()));
                }
            }
        }
        Ok(Self {
            groups,
            dim,
            tables,
        })
    }

    pub fn levels(&self) -> usize {
        self.tables.len()
    }

    pub fn codewords_at(&self, level: usize) -> usize {
        self.tables[level][0].k
    }

    pub fn codewords_per_level(&self) -> Vec<u32> {
        self.tables.iter().map(|l| l[0].k as u32).collect()
    }

    /// Latent channel count this codebook quantizes.
    pub fn latent_channels(&self) -> usize {
        self.groups * self.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.tables
            .iter()
            .map(|l| l.iter().map(|b| b.rows.len()).sum::<usize>())
            .sum()
    }

    /// Pairs of rows closer than `tol` in every component, per (level, group).
    pub fn duplicate_rows(&self, tol: f64) -> Vec<(usize, usize, usize, usize)> {
        let mut dups = Vec::new();
        for (l, level) in self.tables.iter().enumerate() {
            for (m, book) in level.iter().enumerate() {
                for i in 0..book.k {
                    for j in i + 1..book.k {
                        let close = book
                            .row(i)
                            .iter()
                            .zip(book.row(j))
                            .all(|(a, b)| (a - b).abs() <= tol);
                        if close {
                            dups.push((l, m, i, j));
                        }
                    }
                }
            }
        }
        dups
    }

    /// Serialized little-endian layout: magic, version u8, L u8, M u16,
    /// d u16, then per level K_l u32 followed by K_l*M*d f32 in
    /// (group, codeword, dim) order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CODEBOOK_MAGIC);
        out.push(CODEBOOK_VERSION);
        out.push(self.levels() as u8);
        out.extend_from_slice(&(self.groups as u16).to_le_bytes());
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        for level in &self.tables {
            out.extend_from_slice(&(level[0].k as u32).to_le_bytes());
            for book in level {
                for v in &book.rows {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = crate::container::Cursor::new(bytes);
        let magic = cur.take(4, "codebook magic")?;
        if magic != CODEBOOK_MAGIC {
            return Err(Error::BadMagic {
                expected: CODEBOOK_MAGIC,
            });
        }
        let version = cur.u8("codebook version")?;
        if version != CODEBOOK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let levels = cur.u8("codebook levels")? as usize;
        let groups = cur.u16("codebook groups")? as usize;
        let dim = cur.u16("codebook dim")? as usize;
        if levels == 0 || groups == 0 || dim == 0 {
            return Err(Error::Corrupt("zero-sized codebook".into()));
        }
        let mut tables = Vec::with_capacity(levels);
        for _ in 0..levels {
            let k = cur.u32("codebook K")? as usize;
            let mut level = Vec::with_capacity(groups);
            for _ in 0..groups {
                let mut rows = Vec::with_capacity(k * dim);
                for _ in 0..k * dim {
                    rows.push(cur.f32("codeword entry")? as f64);
                }
                level.push(Codebook::new(k, dim, rows)?);
            }
            tables.push(level);
        }
        cur.expect_end()?;
        Self::new(tables)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized bytes; travels in stream headers so a
    /// decoder can refuse to run with the wrong model.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.to_bytes());
        hasher.finalize().into()
    }
}

/// Per-position, per-group codeword indices for one cascade level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    pub h: usize,
    pub w: usize,
    pub groups: usize,
    /// Layout: `indices[(y*w + x)*groups + m]`.
    pub indices: Vec<u32>,
}

impl CodeGrid {
    pub fn new(h: usize, w: usize, groups: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != h * w * groups {
            return Err(Error::Dimension(format!(
                "code grid {h}x{w}x{groups} needs {} indices, got {}",
                h * w * groups,
                indices.len()
            )));
        }
        Ok(Self {
            h,
            w,
            groups,
            indices,
        })
    }

    pub fn zeros(h: usize, w: usize, groups: usize) -> Self {
        Self {
            h,
            w,
            groups,
            indices: vec![0; h * w * groups],
        }
    }

    #[inline]
    pub fn index(&self, pos: usize, group: usize) -> u32 {
        self.indices[pos * self.groups + group]
    }

    /// Indices of one group as a separate stream, position-major.
    pub fn group_stream(&self, group: usize) -> Vec<u32> {
        (0..self.h * self.w).map(|p| self.index(p, group)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Hard,
    Gumbel,
}

/// Stochastic assignment configuration. The random stream is derived from
/// `(seed, position, group)`, so parallel execution stays deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub temperature: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn hard() -> Self {
        Self {
            mode: SamplerMode::Hard,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn gumbel(temperature: f64, seed: u64) -> Self {
        Self {
            mode: SamplerMode::Gumbel,
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SamplerMode::Gumbel && !(self.temperature > 0.0) {
            return Err(Error::BadTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Squared L2 distances between every vector and every codeword, via the
/// expansion |v|^2 + |c|^2 - 2 v.c, clamped at zero against floating-point
/// undershoot. `out[i*K + k] = |v_i - c_k|^2`.
pub fn pairwise_sq_distances(vectors: &[f64], dim: usize, book: &Codebook) -> Result<Vec<f64>> {
    if dim != book.dim {
        return Err(Error::Dimension(format!(
            "vector dim {dim} vs codebook dim {}",
            book.dim
        )));
    }
    if dim == 0 || vectors.len() % dim != 0 {
        return Err(Error::Dimension(
            "vector buffer not a multiple of dim".into(),
        ));
    }
    let count = vectors.len() / dim;
    let code_sq: Vec<f64> = (0..book.k)
        .map(|k| book.row(k).iter().map(|c| c * c).sum())
        .collect();
    let mut out = vec![0.0f64; count * book.k];
    for i in 0..count {
        let v = &vectors[i * dim..(i + 1) * dim];
        let v_sq: f64 = v.iter().map(|x| x * x).sum();
        let row = &mut out[i * book.k..(i + 1) * book.k];
        for (k, o) in row.iter_mut().enumerate() {
            let dot: f64 = v.iter().zip(book.row(k)).map(|(a, b)| a * b).sum();
            *o = (v_sq + code_sq[k] - 2.0 * dot).max(0.0);
        }
    }
    Ok(out)
}

/// Argmin with ties broken toward the lowest index.
#[inline]
pub(crate) fn argmin(dists: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = dists[0];
    for (k, &d) in dists.iter().enumerate().skip(1) {
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

fn check_grid_for_level(grid: &LatentGrid, books: &[Codebook]) -> Result<()> {
    let m = books.len();
    if m == 0 {
        return Err(Error::Empty("level books".into()));
    }
    let dim = books[0].dim;
    if grid.n != m * dim {
        return Err(Error::Dimension(format!(
            "grid channels {} != groups {m} x dim {dim}",
            grid.n
        )));
    }
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent grid".into()));
    }
    Ok(())
}

/// Greedy nearest-codeword assignment for one level. Deterministic; ties go
/// to the lowest index.
pub fn quantize_hard(grid: &LatentGrid, books: &[Codebook]) -> Result<(LatentGrid, CodeGrid)> {
    check_grid_for_level(grid, books)?;
    let m = books.len();
    let dim = books[0].dim;

    let mut quantized = LatentGrid::zeros(grid.h, grid.w, grid.n);
    let mut codes = CodeGrid::zeros(grid.h, grid.w, m);

    let q_chunks: Vec<_> = quantized.values.chunks_mut(grid.n).collect();
    let c_chunks: Vec<_> = codes.indices.chunks_mut(m).collect();
    q_chunks
        .into_par_iter()
        .zip(c_chunks)
        .enumerate()
        .for_each(|(pos, (qv, cv))| {
            let v = grid.vector(pos);
            for (g, book) in books.iter().enumerate() {
                let sub = &v[g * dim..(g + 1) * dim];
                let dists = group_distances(sub, book);
                let k = argmin(&dists);
                cv[g] = k as u32;
                qv[g * dim..(g + 1) * dim].copy_from_slice(book.row(k));
            }
        });
    Ok((quantized, codes))
}

#[inline]
fn group_distances(sub: &[f64], book: &Codebook) -> Vec<f64> {
    let v_sq: f64 = sub.iter().map(|x| x * x).sum();
    (0..book.k)
        .map(|k| {
            let row = book.row(k);
            let mut dot = 0.0;
            let mut c_sq = 0.0;
            for (a, b) in sub.iter().zip(row) {
                dot += a * b;
                c_sq += b * b;
            }
            (v_sq + c_sq - 2.0 * dot).max(0.0)
        })
        .collect()
}

/// Draw a standard Gumbel variate from the open unit interval (exact 0/1
/// rejected so the double log stays finite).
#[inline]
pub(crate) fn gumbel_noise<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return -(-u.ln()).ln();
        }
    }
}

pub(crate) fn position_rng(seed: u64, pos: usize, group: usize) -> ChaCha8Rng {
    // splitmix-style mixing keeps per-(position, group) streams independent.
    let mut z = seed
        ^ (pos as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((group as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Stochastic assignment: index k is drawn with probability
/// softmax(-d^2/tau)_k via the Gumbel-max trick. Also returns those softmax
/// probabilities per (position, group, codeword) for the trainer.
pub fn quantize_stochastic(
    grid: &LatentGrid,
    books: &[Codebook],
    cfg: &SamplerConfig,
) -> Result<(LatentGrid, CodeGrid, Vec<Vec<f64>>)> {
    if cfg.mode != SamplerMode::Gumbel {
        return Err(Error::Config(
            "quantize_stochastic requires gumbel sampler mode".into(),
        ));
    }
    cfg.validate()?;
    check_grid_for_level(grid, books)?;
    let m = books.len();
    let dim = books[0].dim;

    let mut quantized = LatentGrid::zeros(grid.h, grid.w, grid.n);
    let mut codes = CodeGrid::zeros(grid.h, grid.w, m);
    let mut probs: Vec<Vec<f64>> = vec![Vec::new(); grid.positions() * m];

    let q_chunks: Vec<_> = quantized.values.chunks_mut(grid.n).collect();
    let c_chunks: Vec<_> = codes.indices.chunks_mut(m).collect();
    let p_chunks: Vec<_> = probs.chunks_mut(m).collect();
    q_chunks
        .into_par_iter()
        .zip(c_chunks)
        .zip(p_chunks)
        .enumerate()
        .for_each(|(pos, ((qv, cv), pv))| {
            let v = grid.vector(pos);
            for (g, book) in books.iter().enumerate() {
                let sub = &v[g * dim..(g + 1) * dim];
                let dists = group_distances(sub, book);
                let logits: Vec<f64> = dists.iter().map(|d| -d / cfg.temperature).collect();
                let mut rng = position_rng(cfg.seed, pos, g);
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (k, &l) in logits.iter().enumerate() {
                    let perturbed = l + gumbel_noise(&mut rng);
                    if perturbed > best_v {
                        best_v = perturbed;
                        best = k;
                    }
                }
                cv[g] = best as u32;
                qv[g * dim..(g + 1) * dim].copy_from_slice(book.row(best));
                pv[g] = softmax(&logits);
            }
        });
    Ok((quantized, codes, probs))
}

/// Hint the cache about an upcoming codeword row; the decode gather hits
/// rows in data-dependent order that the hardware prefetcher cannot see.
#[inline]
fn prefetch_row(row: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        use core::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let mut p = row.as_ptr() as *const i8;
        let end = p.add(row.len() * 8);
        while p < end {
            _mm_prefetch(p, _MM_HINT_T0);
            p = p.add(64);
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = row;
}

/// Codeword lookup: the inverse of assignment, O(1) per (position, group).
pub fn dequantize(codes: &CodeGrid, books: &[Codebook]) -> Result<LatentGrid> {
    let m = books.len();
    if codes.groups != m {
        return Err(Error::Dimension(format!(
            "code grid has {} groups, books have {m}",
            codes.groups
        )));
    }
    let dim = books[0].dim;
    let positions = codes.h * codes.w;
    let mut grid = LatentGrid::zeros(codes.h, codes.w, m * dim);
    const AHEAD: usize = 4;
    for pos in 0..positions {
        if pos + AHEAD < positions {
            for (g, book) in books.iter().enumerate() {
                let idx = codes.index(pos + AHEAD, g) as usize;
                if idx < book.k {
                    prefetch_row(book.row(idx));
                }
            }
        }
        let out = grid.vector_mut(pos);
        for (g, book) in books.iter().enumerate() {
            let idx = codes.index(pos, g);
            if idx as usize >= book.k {
                return Err(Error::IndexOutOfRange {
                    level: 0,
                    group: g,
                    index: idx,
                    k: book.k as u32,
                });
            }
            out[g * dim..(g + 1) * dim].copy_from_slice(book.row(idx as usize));
        }
    }
    Ok(grid)
}

/// Slice a grid into `m` sub-grids of contiguous channel ranges.
pub fn split_groups(grid: &LatentGrid, m: usize) -> Result<Vec<LatentGrid>> {
    if m == 0 || grid.n % m != 0 {
        return Err(Error::Dimension(format!(
            "channels {} not divisible into {m} groups",
            grid.n
        )));
    }
    let d = grid.n / m;
    let mut out = vec![LatentGrid::zeros(grid.h, grid.w, d); m];
    for pos in 0..grid.positions() {
        let v = grid.vector(pos);
        for (g, sub) in out.iter_mut().enumerate() {
            sub.vector_mut(pos).copy_from_slice(&v[g * d..(g + 1) * d]);
        }
    }
    Ok(out)
}

/// Inverse of [`split_groups`]: concatenate sub-grids along channels.
pub fn merge_groups(parts: &[LatentGrid]) -> Result<LatentGrid> {
    if parts.is_empty() {
        return Err(Error::Empty("group list".into()));
    }
    let (h, w, d) = (parts[0].h, parts[0].w, parts[0].n);
    if parts.iter().any(|p| p.h != h || p.w != w || p.n != d) {
        return Err(Error::Dimension("group shapes differ".into()));
    }
    let mut out = LatentGrid::zeros(h, w, d * parts.len());
    for pos in 0..h * w {
        let v = out.vector_mut(pos);
        for (g, part) in parts.iter().enumerate() {
            v[g * d..(g + 1) * d].copy_from_slice(part.vector(pos));
        }
    }
    Ok(out)
}
