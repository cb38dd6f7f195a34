//! Codebook learning: straight-through Gumbel SGD, a deterministic k-means
//! baseline, synthetic Gaussian-mixture data for estimator validation, and
//! usage diagnostics.

mod gumbel;
mod kmeans;
mod softquant;

pub use gumbel::{train_gumbel_st, train_gumbel_st_from};
pub use kmeans::{train_kmeans, train_kmeans_from};

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cascade::{CascadeConfig, CodeStack};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::quantizer::{quantize_hard, Codebook, MultiCodebook};
use crate::transform::downsample;

const LATENT_DUMP_MAGIC: [u8; 4] = *b"MCQL";
const LATENT_DUMP_VERSION: u8 = 1;

/// Diagonal-covariance Gaussian mixture used to validate mean estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    /// K x d component means, row-major.
    pub means: Vec<Vec<f64>>,
    /// K x d per-dimension variances.
    pub variances: Vec<Vec<f64>>,
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::Config("gmm component counts disagree".into()));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::Config("gmm mean dims disagree".into()));
        }
        if self.variances.iter().any(|v| v.len() != d) {
            return Err(Error::Config("gmm variance dims disagree".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("gmm weights must form a simplex".into()));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("gmm variances must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Draw `count` i.i.d. vectors; labels are kept for evaluation only.
pub fn sample_gmm(spec: &GmmSpec, count: usize, seed: u64) -> Result<(Vec<f64>, Vec<usize>)> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cumulative = Vec::with_capacity(spec.weights.len());
    let mut acc = 0.0;
    for &w in &spec.weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut data = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let k = cumulative
            .iter()
            .position(|&c| u <= c)
            .unwrap_or(spec.weights.len() - 1);
        for dim in 0..d {
            let z: f64 = normal.sample(&mut rng);
            data.push(spec.means[k][dim] + spec.variances[k][dim].sqrt() * z);
        }
        labels.push(k);
    }
    Ok((data, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Draw codewords from the data without replacement.
    RandomSample,
    /// Standard D^2 seeding per sub-codebook.
    KMeansPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    GumbelSt,
    KMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Grids per SGD step (Gumbel) or unused (k-means runs full batches).
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub temperature_initial: f64,
    pub temperature_final: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub init: InitStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_initial: 0.5,
            lr_final: 0.01,
            temperature_initial: 1.0,
            temperature_final: 0.1,
            seed: 0,
            algorithm: Algorithm::GumbelSt,
            init: InitStrategy::KMeansPlusPlus,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.temperature_initial > 0.0 && self.temperature_final > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }

    /// Cosine annealing from the initial to the final rate across epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_initial;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_final
            + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// Exponential decay from the initial to the final temperature.
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_initial;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.temperature_initial * (self.temperature_final / self.temperature_initial).powf(t)
    }
}

/// One row of the loss trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub epoch: usize,
    pub loss: f64,
    pub temperature: f64,
    pub lr: f64,
}

/// Initialize the sub-codebooks of one level from a flat vector dataset
/// (`count` rows of `n = groups * d` channels, sliced per group).
pub fn init_level_books(
    vectors: &[f64],
    n: usize,
    groups: usize,
    k: usize,
    strategy: InitStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Codebook>> {
    if n == 0 || groups == 0 || n % groups != 0 {
        return Err(Error::Dimension(format!(
            "channels {n} not divisible into {groups} groups"
        )));
    }
    let count = vectors.len() / n;
    if count < k {
        return Err(Error::DatasetTooSmall {
            need: k,
            got: count,
        });
    }
    let d = n / groups;
    let mut books = Vec::with_capacity(groups);
    for g in 0..groups {
        let slice_of = |row: usize| &vectors[row * n + g * d..row * n + (g + 1) * d];
        let picks: Vec<usize> = match strategy {
            InitStrategy::RandomSample => rand::seq::index::sample(rng, count, k).into_vec(),
            InitStrategy::KMeansPlusPlus => {
                let mut picks = vec![rng.random_range(0..count)];
                let mut best_d2 = vec![f64::INFINITY; count];
                while picks.len() < k {
                    let last = *picks.last().unwrap();
                    let lastv = slice_of(last).to_vec();
                    let mut total = 0.0;
                    for row in 0..count {
                        let d2: f64 = slice_of(row)
                            .iter()
                            .zip(&lastv)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if d2 < best_d2[row] {
                            best_d2[row] = d2;
                        }
                        total += best_d2[row];
                    }
                    let pick = if total > 0.0 {
                        let mut target: f64 = rng.random::<f64>() * total;
                        let mut chosen = count - 1;
                        for (row, &d2) in best_d2.iter().enumerate() {
                            target -= d2;
                            if target <= 0.0 {
                                chosen = row;
                                break;
                            }
                        }
                        chosen
                    } else {
                        // Degenerate all-identical data: fall back to uniform.
                        rng.random_range(0..count)
                    };
                    picks.push(pick);
                }
                picks
            }
        };
        let mut rows = Vec::with_capacity(k * d);
        for &row in &picks {
            rows.extend_from_slice(slice_of(row));
        }
        books.push(Codebook::new(k, d, rows)?);
    }
    let probe = MultiCodebook::new(vec![books.clone()])?;
    if !probe.duplicate_rows(1e-12).is_empty() {
        log::warn!("initialized codebook contains duplicate rows (degenerate dataset?)");
    }
    Ok(books)
}

/// Initialize a full cascade: level 1 from the corpus vectors, each deeper
/// level from the downsampled residuals under the levels initialized so far.
pub fn init_codebooks(
    corpus: &[LatentGrid],
    cfg: &CascadeConfig,
    strategy: InitStrategy,
    seed: u64,
) -> Result<MultiCodebook> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let n = corpus[0].n;
    if corpus.iter().any(|g| g.n != n) {
        return Err(Error::Dimension("corpus grids disagree on channels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level_grids: Vec<LatentGrid> = corpus.to_vec();
    let mut tables = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let vectors: Vec<f64> = level_grids
            .iter()
            .flat_map(|g| g.values.iter().copied())
            .collect();
        let books = init_level_books(
            &vectors,
            n,
            cfg.groups,
            cfg.codewords_per_level[l] as usize,
            strategy,
            &mut rng,
        )?;
        if l + 1 < cfg.levels {
            let mut next = Vec::with_capacity(level_grids.len());
            for g in &level_grids {
                let (q, _) = quantize_hard(g, &books)?;
                next.push(downsample(&g.sub(&q)?));
            }
            level_grids = next;
        }
        tables.push(books);
    }
    MultiCodebook::new(tables)
}

/// Mean squared error between a grid and its all-soft quantization for one
/// level's books. `noise_seed` fixes an optional Gumbel perturbation of the
/// logits, making the objective deterministic either way.
pub fn relaxed_loss(
    grid: &LatentGrid,
    books: &[Codebook],
    temperature: f64,
    noise_seed: Option<u64>,
) -> Result<f64> {
    let noise = match noise_seed {
        Some(seed) => softquant::NoiseMode::Gumbel { seed },
        None => softquant::NoiseMode::None,
    };
    softquant::relaxed_objective(grid, books, temperature, noise)
}

/// Analytic gradient of [`relaxed_loss`] with respect to every codeword,
/// returned per group as flat `K*d` buffers.
pub fn relaxed_loss_grad(
    grid: &LatentGrid,
    books: &[Codebook],
    temperature: f64,
    noise_seed: Option<u64>,
) -> Result<Vec<Vec<f64>>> {
    let noise = match noise_seed {
        Some(seed) => softquant::NoiseMode::Gumbel { seed },
        None => softquant::NoiseMode::None,
    };
    softquant::relaxed_objective_grad(grid, books, temperature, noise)
}

/// Perturb duplicate codewords by 1e-6 noise so frequency tables stay
/// well-defined; returns how many rows were touched.
pub fn dedup_codebooks(books: &mut MultiCodebook, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEDC_0DE5_AA55_AA55);
    let mut touched = 0;
    loop {
        let dups = books.duplicate_rows(1e-12);
        if dups.is_empty() {
            return touched;
        }
        for (l, m, _, j) in dups {
            let row = books.tables[l][m].row_mut(j);
            for v in row.iter_mut() {
                *v += 1e-6 * rng.random_range(-1.0..1.0);
            }
            touched += 1;
            log::warn!("perturbed duplicate codeword {j} at level {l} group {m}");
        }
    }
}

/// Per-(level, group) usage histogram and the list of never-assigned
/// codewords over a validation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadCodeReport {
    /// `usage[level][group][k]` = occurrences.
    pub usage: Vec<Vec<Vec<u64>>>,
    /// (level, group, codeword) triples with zero occurrences.
    pub dead: Vec<(usize, usize, u32)>,
}

impl DeadCodeReport {
    pub fn dead_count(&self) -> usize {
        self.dead.len()
    }
}

pub fn dead_code_report(
    stacks: &[CodeStack],
    codewords_per_level: &[u32],
    groups: usize,
) -> Result<DeadCodeReport> {
    let levels = codewords_per_level.len();
    let mut usage: Vec<Vec<Vec<u64>>> = codewords_per_level
        .iter()
        .map(|&k| vec![vec![0u64; k as usize]; groups])
        .collect();
    for stack in stacks {
        if stack.levels.len() != levels {
            return Err(Error::Dimension("stack level count mismatch".into()));
        }
        for (l, grid) in stack.levels.iter().enumerate() {
            if grid.groups != groups {
                return Err(Error::Dimension("stack group count mismatch".into()));
            }
            for pos in 0..grid.h * grid.w {
                for m in 0..groups {
                    let idx = grid.index(pos, m);
                    if idx >= codewords_per_level[l] {
                        return Err(Error::IndexOutOfRange {
                            level: l + 1,
                            group: m,
                            index: idx,
                            k: codewords_per_level[l],
                        });
                    }
                    usage[l][m][idx as usize] += 1;
                }
            }
        }
    }
    let mut dead = Vec::new();
    for (l, level) in usage.iter().enumerate() {
        for (m, hist) in level.iter().enumerate() {
            for (k, &c) in hist.iter().enumerate() {
                if c == 0 {
                    dead.push((l, m, k as u32));
                }
            }
        }
    }
    Ok(DeadCodeReport { usage, dead })
}

/// Write a corpus of latent grids as a raw dump: magic, version, grid count,
/// then per grid h/w/n u32 and the f32 payload, all little-endian.
pub fn write_latent_dump<P: AsRef<Path>>(path: P, corpus: &[LatentGrid]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&LATENT_DUMP_MAGIC);
    out.push(LATENT_DUMP_VERSION);
    out.extend_from_slice(&(corpus.len() as u32).to_le_bytes());
    for g in corpus {
        out.extend_from_slice(&(g.h as u32).to_le_bytes());
        out.extend_from_slice(&(g.w as u32).to_le_bytes());
        out.extend_from_slice(&(g.n as u32).to_le_bytes());
        for &v in &g.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_latent_dump<P: AsRef<Path>>(path: P) -> Result<Vec<LatentGrid>> {
    let bytes = fs::read(path)?;
    let mut cur = crate::container::Cursor::new(&bytes);
    if cur.take(4, "latent dump magic")? != LATENT_DUMP_MAGIC {
        return Err(Error::BadMagic {
            expected: LATENT_DUMP_MAGIC,
        });
    }
    let version = cur.u8("latent dump version")?;
    if version != LATENT_DUMP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32("grid count")? as usize;
    let mut corpus = Vec::with_capacity(count);
    for _ in 0..count {
        let h = cur.u32("grid h")? as usize;
        let w = cur.u32("grid w")? as usize;
        let n = cur.u32("grid n")? as usize;
        let mut values = Vec::with_capacity(h * w * n);
        for _ in 0..h * w * n {
            values.push(cur.f32("latent value")? as f64);
        }
        corpus.push(LatentGrid::new(h, w, n, values)?);
    }
    cur.expect_end()?;
    Ok(corpus)
}
