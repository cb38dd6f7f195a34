//! L-level recursive residual coding: quantize, subtract, downsample on the
//! way in; lookup, upsample, add on the way out.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::quantizer::{
    dequantize, quantize_hard, quantize_stochastic, CodeGrid, MultiCodebook, SamplerConfig,
    SamplerMode,
};
use crate::transform::{downsample, upsample};

/// Structure of the cascade; must agree with the codebook it is used with.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub levels: usize,
    pub groups: usize,
    pub codewords_per_level: Vec<u32>,
    pub sampler: SamplerConfig,
}

impl CascadeConfig {
    pub fn hard(levels: usize, groups: usize, codewords_per_level: Vec<u32>) -> Self {
        Self {
            levels,
            groups,
            codewords_per_level,
            sampler: SamplerConfig::hard(),
        }
    }

    pub fn validate(&self, books: &MultiCodebook) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("cascade needs at least one level".into()));
        }
        if self.levels != books.levels()
            || self.groups != books.groups
            || self.codewords_per_level != books.codewords_per_level()
        {
            return Err(Error::Config(format!(
                "cascade config (L={}, M={}, K={:?}) does not match codebook (L={}, M={}, K={:?})",
                self.levels,
                self.groups,
                self.codewords_per_level,
                books.levels(),
                books.groups,
                books.codewords_per_level()
            )));
        }
        self.sampler.validate()
    }
}

/// One CodeGrid per level, finest first. Level l+1 spatial dims are
/// ceil(level l / 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStack {
    pub levels: Vec<CodeGrid>,
}

impl CodeStack {
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|g| (g.h, g.w)).collect()
    }

    pub fn total_positions(&self) -> usize {
        self.levels.iter().map(|g| g.h * g.w * g.groups).sum()
    }

    /// Enforce the halving law between consecutive levels.
    pub fn validate_shapes(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Empty("code stack".into()));
        }
        for i in 1..self.levels.len() {
            let (ph, pw) = (self.levels[i - 1].h, self.levels[i - 1].w);
            let (h, w) = (self.levels[i].h, self.levels[i].w);
            if h != ph.div_ceil(2) || w != pw.div_ceil(2) {
                return Err(Error::Corrupt(format!(
                    "level {} dims {}x{} violate the halving law from {}x{}",
                    i + 1,
                    h,
                    w,
                    ph,
                    pw
                )));
            }
            if self.levels[i].groups != self.levels[i - 1].groups {
                return Err(Error::Corrupt("levels disagree on group count".into()));
            }
        }
        Ok(())
    }

    pub fn validate_indices(&self, codewords_per_level: &[u32]) -> Result<()> {
        if codewords_per_level.len() != self.levels.len() {
            return Err(Error::Corrupt("level count mismatch".into()));
        }
        for (l, (grid, &k)) in self.levels.iter().zip(codewords_per_level).enumerate() {
            if let Some(&bad) = grid.indices.iter().find(|&&i| i >= k) {
                return Err(Error::IndexOutOfRange {
                    level: l + 1,
                    group: 0,
                    index: bad,
                    k,
                });
            }
        }
        Ok(())
    }
}

fn mix_level_seed(seed: u64, level: usize) -> u64 {
    seed ^ ((level as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Run the encode recursion. Returns the per-level codes and the per-level
/// quantized grids (useful for error reporting and training).
pub fn encode_cascade(
    latent: &LatentGrid,
    books: &MultiCodebook,
    cfg: &CascadeConfig,
) -> Result<(CodeStack, Vec<LatentGrid>)> {
    cfg.validate(books)?;
    if latent.n != books.latent_channels() {
        return Err(Error::Dimension(format!(
            "latent channels {} != M*d = {}",
            latent.n,
            books.latent_channels()
        )));
    }
    let mut codes = Vec::with_capacity(cfg.levels);
    let mut quantized = Vec::with_capacity(cfg.levels);
    let mut level_input = latent.clone();
    for l in 0..cfg.levels {
        let (q, c) = match cfg.sampler.mode {
            SamplerMode::Hard => quantize_hard(&level_input, &books.tables[l])?,
            SamplerMode::Gumbel => {
                let mut sampler = cfg.sampler;
                sampler.seed = mix_level_seed(sampler.seed, l);
                let (q, c, _) = quantize_stochastic(&level_input, &books.tables[l], &sampler)?;
                (q, c)
            }
        };
        if l + 1 < cfg.levels {
            level_input = downsample(&level_input.sub(&q)?);
        }
        codes.push(c);
        quantized.push(q);
    }
    Ok((CodeStack { levels: codes }, quantized))
}

/// Run the decode recursion over all levels.
pub fn decode_cascade(codes: &CodeStack, books: &MultiCodebook) -> Result<LatentGrid> {
    decode_cascade_truncated(codes, books, 1)
}

/// Decode using levels `start_level..=L` only (1-based). Skipped finer levels
/// contribute zero correction, so the output keeps level-1 resolution.
pub fn decode_cascade_truncated(
    codes: &CodeStack,
    books: &MultiCodebook,
    start_level: usize,
) -> Result<LatentGrid> {
    codes.validate_shapes()?;
    let levels = codes.levels.len();
    if levels != books.levels() {
        return Err(Error::Corrupt(format!(
            "stack has {levels} levels, codebook has {}",
            books.levels()
        )));
    }
    if start_level < 1 || start_level > levels {
        return Err(Error::Config(format!(
            "start level {start_level} outside 1..={levels}"
        )));
    }
    let mut restored = dequantize(&codes.levels[levels - 1], &books.tables[levels - 1])
        .map_err(|e| tag_level(e, levels))?;
    if levels == 1 {
        return Ok(restored);
    }
    for l in (0..levels - 1).rev() {
        let (th, tw) = (codes.levels[l].h, codes.levels[l].w);
        let up = crop_grid(&upsample(&restored), th, tw);
        restored = if l + 1 >= start_level {
            let q =
                dequantize(&codes.levels[l], &books.tables[l]).map_err(|e| tag_level(e, l + 1))?;
            q.add(&up)?
        } else {
            up
        };
    }
    Ok(restored)
}

fn tag_level(e: Error, level: usize) -> Error {
    match e {
        Error::IndexOutOfRange {
            group, index, k, ..
        } => Error::IndexOutOfRange {
            level,
            group,
            index,
            k,
        },
        other => other,
    }
}

/// Keep the top-left th x tw region (upsampling a ceil-halved grid can
/// overshoot odd extents by one).
fn crop_grid(grid: &LatentGrid, th: usize, tw: usize) -> LatentGrid {
    if grid.h == th && grid.w == tw {
        return grid.clone();
    }
    let mut out = LatentGrid::zeros(th, tw, grid.n);
    for y in 0..th {
        for x in 0..tw {
            let src = (y * grid.w + x) * grid.n;
            let dst = (y * tw + x) * grid.n;
            out.values[dst..dst + grid.n].copy_from_slice(&grid.values[src..src + grid.n]);
        }
    }
    out
}

/// Per-level quantization error and end-to-end reconstruction error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `|y_l - quantized_l|^2` for each level.
    pub per_level: Vec<f64>,
    /// `|y_1 - restored_1|^2` after the full decode recursion.
    pub total: f64,
}

pub fn reconstruction_error(
    latent: &LatentGrid,
    books: &MultiCodebook,
    cfg: &CascadeConfig,
) -> Result<ErrorReport> {
    cfg.validate(books)?;
    let mut per_level = Vec::with_capacity(cfg.levels);
    let mut level_input = latent.clone();
    let mut codes = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let (q, c) = match cfg.sampler.mode {
            SamplerMode::Hard => quantize_hard(&level_input, &books.tables[l])?,
            SamplerMode::Gumbel => {
                let mut sampler = cfg.sampler;
                sampler.seed = mix_level_seed(sampler.seed, l);
                let (q, c, _) = quantize_stochastic(&level_input, &books.tables[l], &sampler)?;
                (q, c)
            }
        };
        let residual = level_input.sub(&q)?;
        per_level.push(residual.sq_norm());
        if l + 1 < cfg.levels {
            level_input = downsample(&residual);
        }
        codes.push(c);
    }
    let restored = decode_cascade(&CodeStack { levels: codes }, books)?;
    let total = latent.sub(&restored)?.sq_norm();
    Ok(ErrorReport { per_level, total })
}
