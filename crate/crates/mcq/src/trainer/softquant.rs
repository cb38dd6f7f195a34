//! Relaxed (softmax) quantization with hand-rolled reverse-mode gradients.
//! The straight-through estimator quantizes hard on the forward pass and
//! differentiates the softmax relaxation on the backward pass, so every
//! codeword receives gradient weighted by its soft assignment.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::quantizer::{gumbel_noise, position_rng, softmax, Codebook, MultiCodebook};
use crate::transform::downsample;

#[derive(Debug, Clone, Copy)]
pub(crate) enum NoiseMode {
    /// Plain softmax(-d^2/tau); deterministic, used by the gradient check.
    None,
    /// Gumbel-perturbed logits; the perturbation is part of the cached soft
    /// weights so forward sample and backward relaxation agree.
    Gumbel { seed: u64 },
}

/// Cached per-(position, group) soft weights from a forward pass.
pub(crate) struct QuantCache {
    soft: Vec<f64>,
    k: usize,
}

/// Forward pass through one level's quantizer. With `straight_through` the
/// returned grid holds the selected codeword rows (argmax of the possibly
/// perturbed logits); otherwise it holds the soft mixture.
pub(crate) fn soft_forward(
    grid: &LatentGrid,
    books: &[Codebook],
    tau: f64,
    noise: NoiseMode,
    straight_through: bool,
) -> Result<(LatentGrid, QuantCache)> {
    if !(tau > 0.0) {
        return Err(Error::BadTemperature(tau));
    }
    let m = books.len();
    let dim = books[0].dim;
    if grid.n != m * dim {
        return Err(Error::Dimension(format!(
            "grid channels {} != {m} groups x dim {dim}",
            grid.n
        )));
    }
    let k = books[0].k;
    if books.iter().any(|b| b.k != k || b.dim != dim) {
        return Err(Error::Config("level books disagree on K or dim".into()));
    }
    let positions = grid.positions();
    let mut out = LatentGrid::zeros(grid.h, grid.w, grid.n);
    let mut soft = vec![0.0f64; positions * m * k];
    for pos in 0..positions {
        let v = grid.vector(pos);
        let o = &mut out.values[pos * grid.n..(pos + 1) * grid.n];
        for (g, book) in books.iter().enumerate() {
            let sub = &v[g * dim..(g + 1) * dim];
            let mut logits: Vec<f64> = (0..k)
                .map(|c| {
                    let d2: f64 = sub
                        .iter()
                        .zip(book.row(c))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    -d2 / tau
                })
                .collect();
            if let NoiseMode::Gumbel { seed } = noise {
                let mut rng = position_rng(seed, pos, g);
                for l in logits.iter_mut() {
                    *l += gumbel_noise(&mut rng);
                }
            }
            let s = softmax(&logits);
            let slot = &mut soft[(pos * m + g) * k..(pos * m + g + 1) * k];
            slot.copy_from_slice(&s);
            let target = &mut o[g * dim..(g + 1) * dim];
            if straight_through {
                let mut best = 0usize;
                for (c, &w) in s.iter().enumerate().skip(1) {
                    if w > s[best] {
                        best = c;
                    }
                }
                target.copy_from_slice(book.row(best));
            } else {
                for t in target.iter_mut() {
                    *t = 0.0;
                }
                for (c, &w) in s.iter().enumerate() {
                    for (t, b) in target.iter_mut().zip(book.row(c)) {
                        *t += w * b;
                    }
                }
            }
        }
    }
    Ok((out, QuantCache { soft, k }))
}

/// Gradients of the relaxed quantizer output with respect to the inputs and
/// the codewords. `upstream` is dLoss/dOutput; the soft weights come from
/// the matching forward cache.
pub(crate) fn soft_backward(
    grid: &LatentGrid,
    books: &[Codebook],
    cache: &QuantCache,
    upstream: &LatentGrid,
    tau: f64,
) -> (LatentGrid, Vec<Vec<f64>>) {
    let m = books.len();
    let dim = books[0].dim;
    let k = cache.k;
    let mut grad_input = LatentGrid::zeros(grid.h, grid.w, grid.n);
    let mut grad_books: Vec<Vec<f64>> = (0..m).map(|_| vec![0.0; k * dim]).collect();
    for pos in 0..grid.positions() {
        let v = grid.vector(pos);
        let u = upstream.vector(pos);
        let gi = grad_input.vector_mut(pos);
        for (g, book) in books.iter().enumerate() {
            let sub = &v[g * dim..(g + 1) * dim];
            let usub = &u[g * dim..(g + 1) * dim];
            let s = &cache.soft[(pos * m + g) * k..(pos * m + g + 1) * k];
            // t_c = u . C_c, and the weighted mean of t under s.
            let mut t = vec![0.0f64; k];
            let mut t_mean = 0.0;
            for c in 0..k {
                let dot: f64 = usub.iter().zip(book.row(c)).map(|(a, b)| a * b).sum();
                t[c] = dot;
                t_mean += s[c] * dot;
            }
            let gb = &mut grad_books[g];
            let gsub = &mut gi[g * dim..(g + 1) * dim];
            for c in 0..k {
                let r = s[c] * (t[c] - t_mean);
                let row = book.row(c);
                let grow = &mut gb[c * dim..(c + 1) * dim];
                for d in 0..dim {
                    let diff = sub[d] - row[d];
                    // Mixture term plus the logit term through -|y - C|^2/tau.
                    grow[d] += s[c] * usub[d] + r * 2.0 * diff / tau;
                    gsub[d] += r * (-2.0 * diff / tau);
                }
            }
        }
    }
    (grad_input, grad_books)
}

/// Everything the backward pass needs from one training forward pass.
pub(crate) struct CascadeTrainCache {
    pub inputs: Vec<LatentGrid>,
    pub caches: Vec<QuantCache>,
    pub restored: LatentGrid,
    pub loss: f64,
}

fn assert_even_dims(grid: &LatentGrid, levels: usize) -> Result<()> {
    let (mut h, mut w) = (grid.h, grid.w);
    for l in 0..levels.saturating_sub(1) {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "training grids must halve evenly: {h}x{w} at level {}",
                l + 1
            )));
        }
        h /= 2;
        w /= 2;
    }
    Ok(())
}

/// Straight-through forward across the whole cascade: hard samples drive the
/// residuals and the reported loss; soft weights are cached for backward.
pub(crate) fn cascade_train_forward(
    latent: &LatentGrid,
    books: &MultiCodebook,
    tau: f64,
    noise_seed: Option<u64>,
) -> Result<CascadeTrainCache> {
    let levels = books.levels();
    assert_even_dims(latent, levels)?;
    let mut inputs = Vec::with_capacity(levels);
    let mut caches = Vec::with_capacity(levels);
    let mut quantized = Vec::with_capacity(levels);
    let mut y = latent.clone();
    for l in 0..levels {
        let noise = match noise_seed {
            Some(seed) => NoiseMode::Gumbel {
                seed: seed ^ ((l as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)),
            },
            None => NoiseMode::None,
        };
        let (q, cache) = soft_forward(&y, &books.tables[l], tau, noise, true)?;
        let next = if l + 1 < levels {
            Some(downsample(&y.sub(&q)?))
        } else {
            None
        };
        inputs.push(y);
        caches.push(cache);
        quantized.push(q);
        if let Some(n) = next {
            y = n;
        } else {
            break;
        }
    }
    let mut restored = quantized[levels - 1].clone();
    for l in (0..levels - 1).rev() {
        restored = quantized[l].add(&upsample_exact(&restored))?;
    }
    let diff = latent.sub(&restored)?;
    let loss = diff.sq_norm() / diff.values.len() as f64;
    Ok(CascadeTrainCache {
        inputs,
        caches,
        restored,
        loss,
    })
}

fn upsample_exact(grid: &LatentGrid) -> LatentGrid {
    crate::transform::upsample(grid)
}

/// Adjoint of nearest-neighbor 2x upsampling: sum over each 2x2 block.
fn upsample_transpose(grad: &LatentGrid) -> LatentGrid {
    let mut out = LatentGrid::zeros(grad.h / 2, grad.w / 2, grad.n);
    for y in 0..grad.h {
        for x in 0..grad.w {
            let src = (y * grad.w + x) * grad.n;
            let dst = ((y / 2) * out.w + x / 2) * grad.n;
            for c in 0..grad.n {
                out.values[dst + c] += grad.values[src + c];
            }
        }
    }
    out
}

/// Adjoint of 2x2 average pooling on even extents: spread a quarter of each
/// coarse gradient into its source window.
fn downsample_transpose(grad: &LatentGrid) -> LatentGrid {
    let mut out = LatentGrid::zeros(grad.h * 2, grad.w * 2, grad.n);
    for y in 0..out.h {
        for x in 0..out.w {
            let src = ((y / 2) * grad.w + x / 2) * grad.n;
            let dst = (y * out.w + x) * grad.n;
            for c in 0..grad.n {
                out.values[dst + c] = grad.values[src + c] / 4.0;
            }
        }
    }
    out
}

/// Backward pass matching [`cascade_train_forward`]. Returns per-level,
/// per-group codeword gradients (each `K*d` flat).
pub(crate) fn cascade_train_backward(
    latent: &LatentGrid,
    books: &MultiCodebook,
    tau: f64,
    cache: &CascadeTrainCache,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let levels = books.levels();
    let numel = latent.values.len() as f64;
    // d loss / d restored_1.
    let mut v = cache.restored.sub(latent)?;
    for val in v.values.iter_mut() {
        *val *= 2.0 / numel;
    }
    // d loss / d quantized_l along the decode chain.
    let mut decode_grads = Vec::with_capacity(levels);
    decode_grads.push(v.clone());
    for _ in 1..levels {
        v = upsample_transpose(&v);
        decode_grads.push(v.clone());
    }
    // Walk the encode chain from the deepest level back.
    let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); levels];
    let mut w_next: Option<LatentGrid> = None;
    for l in (0..levels).rev() {
        let delta = match &w_next {
            Some(w) => Some(downsample_transpose(w)),
            None => None,
        };
        let mut u = decode_grads[l].clone();
        if let Some(d) = &delta {
            u = u.sub(d)?;
        }
        let (grad_y, grad_books) = soft_backward(
            &cache.inputs[l],
            &books.tables[l],
            &cache.caches[l],
            &u,
            tau,
        );
        grads[l] = grad_books;
        let mut w = grad_y;
        if let Some(d) = delta {
            w = w.add(&d)?;
        }
        w_next = Some(w);
    }
    Ok(grads)
}

/// All-soft scalar objective for the gradient check: mean squared error
/// between the inputs and their soft mixtures, single level.
pub(crate) fn relaxed_objective(
    grid: &LatentGrid,
    books: &[Codebook],
    tau: f64,
    noise: NoiseMode,
) -> Result<f64> {
    let (soft, _) = soft_forward(grid, books, tau, noise, false)?;
    let diff = grid.sub(&soft)?;
    Ok(diff.sq_norm() / diff.values.len() as f64)
}

/// Analytic gradient of [`relaxed_objective`] with respect to every codeword.
pub(crate) fn relaxed_objective_grad(
    grid: &LatentGrid,
    books: &[Codebook],
    tau: f64,
    noise: NoiseMode,
) -> Result<Vec<Vec<f64>>> {
    let (soft, cache) = soft_forward(grid, books, tau, noise, false)?;
    let numel = grid.values.len() as f64;
    let mut upstream = soft.sub(grid)?;
    for v in upstream.values.iter_mut() {
        *v *= 2.0 / numel;
    }
    let (_, grad_books) = soft_backward(grid, books, &cache, &upstream, tau);
    Ok(grad_books)
}
