//! Deterministic Lloyd baseline: each level is trained greedily on the hard
//! residuals of the level before it, one sub-codebook per group.

use crate::cascade::CascadeConfig;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::quantizer::{quantize_hard, Codebook, MultiCodebook};
use crate::transform::downsample;

use super::{dedup_codebooks, init_level_books, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Train layer-wise with Lloyd iterations. Returns the codebook and one
/// inertia trace per level (non-increasing within each level).
pub fn train_kmeans(
    corpus: &[LatentGrid],
    cascade: &CascadeConfig,
    cfg: &TrainConfig,
) -> Result<(MultiCodebook, Vec<Vec<f64>>)> {
    run_kmeans(corpus, cascade, cfg, None)
}

/// Same as [`train_kmeans`] but starting from an explicit codebook instead
/// of the config's init strategy.
pub fn train_kmeans_from(
    corpus: &[LatentGrid],
    init: MultiCodebook,
    cfg: &TrainConfig,
) -> Result<(MultiCodebook, Vec<Vec<f64>>)> {
    let cascade = CascadeConfig {
        levels: init.levels(),
        groups: init.groups,
        codewords_per_level: init.codewords_per_level(),
        sampler: crate::quantizer::SamplerConfig::hard(),
    };
    run_kmeans(corpus, &cascade, cfg, Some(init))
}

fn run_kmeans(
    corpus: &[LatentGrid],
    cascade: &CascadeConfig,
    cfg: &TrainConfig,
    init: Option<MultiCodebook>,
) -> Result<(MultiCodebook, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let n = corpus[0].n;
    if corpus.iter().any(|g| g.n != n) {
        return Err(Error::Dimension("corpus grids disagree on channels".into()));
    }
    if n % cascade.groups != 0 {
        return Err(Error::Dimension(format!(
            "channels {n} not divisible into {} groups",
            cascade.groups
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut level_grids: Vec<LatentGrid> = corpus.to_vec();
    let mut tables = Vec::with_capacity(cascade.levels);
    let mut traces = Vec::with_capacity(cascade.levels);
    for l in 0..cascade.levels {
        let vectors: Vec<f64> = level_grids
            .iter()
            .flat_map(|g| g.values.iter().copied())
            .collect();
        let level_init = match &init {
            Some(books) => books.tables[l].clone(),
            None => init_level_books(
                &vectors,
                n,
                cascade.groups,
                cascade.codewords_per_level[l] as usize,
                cfg.init,
                &mut rng,
            )?,
        };
        let (books, trace) = lloyd_level(&vectors, n, level_init, cfg.epochs);
        if l + 1 < cascade.levels {
            let mut next = Vec::with_capacity(level_grids.len());
            for g in &level_grids {
                let (q, _) = quantize_hard(g, &books)?;
                next.push(downsample(&g.sub(&q)?));
            }
            level_grids = next;
        }
        tables.push(books);
        traces.push(trace);
    }
    let mut books = MultiCodebook::new(tables)?;
    let touched = dedup_codebooks(&mut books, cfg.seed);
    if touched > 0 {
        log::warn!("perturbed {touched} duplicate codewords after k-means");
    }
    Ok((books, traces))
}

/// Lloyd iterations over one level's data for every group. The trace holds
/// the assignment inertia (summed over groups) before each centroid update.
fn lloyd_level(
    vectors: &[f64],
    n: usize,
    mut books: Vec<Codebook>,
    iterations: usize,
) -> (Vec<Codebook>, Vec<f64>) {
    let groups = books.len();
    let d = n / groups;
    let count = vectors.len() / n;
    let mut trace = Vec::with_capacity(iterations);
    let mut assignments = vec![0usize; count * groups];
    let mut distances = vec![0.0f64; count * groups];
    for _ in 0..iterations {
        // Assignment step.
        let mut inertia = 0.0;
        for (g, book) in books.iter().enumerate() {
            for row in 0..count {
                let x = &vectors[row * n + g * d..row * n + (g + 1) * d];
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for k in 0..book.k {
                    let d2: f64 = x
                        .iter()
                        .zip(book.row(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d2 < best_d {
                        best_d = d2;
                        best = k;
                    }
                }
                assignments[row * groups + g] = best;
                distances[row * groups + g] = best_d;
                inertia += best_d;
            }
        }
        trace.push(inertia);
        // Update step: centroids move to cluster means.
        for (g, book) in books.iter_mut().enumerate() {
            let k = book.k;
            let mut sums = vec![0.0f64; k * d];
            let mut counts = vec![0usize; k];
            for row in 0..count {
                let c = assignments[row * groups + g];
                counts[c] += 1;
                let x = &vectors[row * n + g * d..row * n + (g + 1) * d];
                for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (w, s) in book.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                        *w = s * inv;
                    }
                }
            }
            // Re-seed empties from the point farthest from its centroid,
            // consuming one point per empty cluster.
            let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
            for empty in empties {
                let mut far_row = 0usize;
                let mut far_d = -1.0f64;
                for row in 0..count {
                    if distances[row * groups + g] > far_d {
                        far_d = distances[row * groups + g];
                        far_row = row;
                    }
                }
                let x = &vectors[far_row * n + g * d..far_row * n + (g + 1) * d];
                book.row_mut(empty).copy_from_slice(x);
                distances[far_row * groups + g] = 0.0;
                assignments[far_row * groups + g] = empty;
            }
        }
    }
    (books, trace)
}
