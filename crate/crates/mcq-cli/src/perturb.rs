//! Code perturbation: replace a fraction of stream indices with random
//! different values to probe how reconstruction and rate react.

use anyhow::{bail, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mcq::CodeStack;

/// Replace `floor(fraction * total)` uniformly chosen code positions with a
/// uniform random *different* index of the same level. Positions whose
/// level has K=1 have no different index and are left unchanged. Returns
/// the number of indices actually changed.
pub fn perturb_stack(
    stack: &mut CodeStack,
    codewords_per_level: &[u32],
    fraction: f64,
    seed: u64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        bail!("perturbation fraction {fraction} outside [0, 1]");
    }
    if stack.levels.len() != codewords_per_level.len() {
        bail!("stack level count does not match codeword list");
    }
    let total = stack.total_positions();
    let count = (fraction * total as f64).floor() as usize;
    if count == 0 {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count);
    // Flat index -> (level, offset) via level extents.
    let extents: Vec<usize> = stack.levels.iter().map(|g| g.h * g.w * g.groups).collect();
    let mut changed = 0usize;
    for flat in picks {
        let mut at = flat;
        let mut level = 0usize;
        while at >= extents[level] {
            at -= extents[level];
            level += 1;
        }
        let k = codewords_per_level[level];
        if k <= 1 {
            continue;
        }
        let old = stack.levels[level].indices[at];
        // Uniform over the K-1 values that differ from the old index.
        let draw = rng.random_range(0..k - 1);
        let new = if draw >= old { draw + 1 } else { draw };
        stack.levels[level].indices[at] = new;
        changed += 1;
    }
    Ok(changed)
}
