//! Joint end-to-end codebook SGD with straight-through Gumbel sampling.
//! Every level receives gradients on every step; the forward loss is always
//! computed from the hard samples.

use rayon::prelude::*;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cascade::CascadeConfig;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::quantizer::MultiCodebook;

use super::softquant::{cascade_train_backward, cascade_train_forward};
use super::{dedup_codebooks, init_codebooks, TracePoint, TrainConfig};

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 3;

/// Train a fresh codebook initialized per the config's strategy.
pub fn train_gumbel_st(
    corpus: &[LatentGrid],
    cascade: &CascadeConfig,
    cfg: &TrainConfig,
) -> Result<(MultiCodebook, Vec<TracePoint>)> {
    let init = init_codebooks(corpus, cascade, cfg.init, cfg.seed)?;
    train_gumbel_st_from(corpus, init, cfg)
}

/// Train starting from an explicit initial codebook.
pub fn train_gumbel_st_from(
    corpus: &[LatentGrid],
    mut books: MultiCodebook,
    cfg: &TrainConfig,
) -> Result<(MultiCodebook, Vec<TracePoint>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    if corpus.iter().any(|g| g.n != books.latent_channels()) {
        return Err(Error::Dimension(
            "corpus channels do not match the codebook".into(),
        ));
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let tau = cfg.temperature_at(epoch);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Per-grid passes run in parallel; the collected order is fixed
            // by the batch, so the reduction below does not depend on the
            // thread count.
            let results: Vec<_> = batch
                .par_iter()
                .map(|&gi| {
                    let noise = grid_noise_seed(cfg.seed, epoch, gi);
                    let cache = cascade_train_forward(&corpus[gi], &books, tau, Some(noise))?;
                    let grads = cascade_train_backward(&corpus[gi], &books, tau, &cache)?;
                    Ok::<_, Error>((cache.loss, grads))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += loss * scale;
                for (l, level) in grads.iter().enumerate() {
                    for (m, gb) in level.iter().enumerate() {
                        let rows = &mut books.tables[l][m].rows;
                        for (w, g) in rows.iter_mut().zip(gb) {
                            *w -= lr * scale * g;
                        }
                    }
                }
            }
            epoch_loss += batch_loss;
            batches += 1;
        }
        epoch_loss /= batches as f64;
        trace.push(TracePoint {
            epoch,
            loss: epoch_loss,
            temperature: tau,
            lr,
        });
        if epoch == 0 && epoch_loss.is_finite() {
            initial_loss = epoch_loss;
        } else if !epoch_loss.is_finite() || epoch_loss > DIVERGENCE_FACTOR * initial_loss {
            bad_epochs += 1;
            if bad_epochs >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged(DIVERGENCE_PATIENCE));
            }
        } else {
            bad_epochs = 0;
        }
    }
    let touched = dedup_codebooks(&mut books, cfg.seed);
    if touched > 0 {
        log::warn!("perturbed {touched} duplicate codewords after training");
    }
    Ok((books, trace))
}

fn grid_noise_seed(seed: u64, epoch: usize, grid_index: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93)
        ^ (grid_index as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
    z = (z ^ (z >> 32)).wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z ^ (z >> 29)
}
