//! Latency study over codebook geometry: encode is quantize plus entropy
//! coding, decode is entropy decoding plus table lookup.

use std::time::Instant;

use anyhow::{bail, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mcq::cascade::CodeStack;
use mcq::entropy::{build_tables, decode_indices, encode_indices};
use mcq::quantizer::{dequantize, quantize_hard, Codebook};
use mcq::LatentGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub groups: usize,
    pub codewords: u32,
    pub enc_ms: f64,
    pub dec_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub groups: Vec<usize>,
    pub codewords: Vec<u32>,
    /// Latent grid extent fed to every configuration.
    pub grid_h: usize,
    pub grid_w: usize,
    /// Channels per group; total channels scale with the group count.
    pub dim: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            groups: vec![2],
            codewords: vec![64, 128, 256, 512, 1024, 2048, 4096, 8192],
            grid_h: 96,
            grid_w: 64,
            dim: 24,
            runs: 20,
            warmup: 3,
            seed: 7,
        }
    }
}

/// Spatially structured latents, like an analysis transform would produce
/// from a natural image. Code usage then concentrates the way it does in
/// deployment; white noise would spread assignments uniformly over all K
/// codewords and measure cache capacity instead of codec scaling.
fn structured_grid(h: usize, w: usize, n: usize, seed: u64) -> LatentGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: Vec<f64> = (0..3 * n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let values = (0..h * w * n)
        .map(|i| {
            let c = i % n;
            let pos = i / n;
            let (x, y) = ((pos % w) as f64, (pos / w) as f64);
            0.6 * (x / 9.0 + phase[3 * c]).sin() * (y / 7.0 + phase[3 * c + 1]).cos()
                + 0.25 * ((x + y) / 17.0 + phase[3 * c + 2]).sin()
                + rng.random_range(-0.05..0.05)
        })
        .collect();
    LatentGrid::new(h, w, n, values).expect("structured grid")
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.warmup < 3 {
        bail!("warmup must be at least 3 iterations");
    }
    if cfg.runs < 20 {
        bail!("need at least 20 timed runs for a stable median");
    }
    let mut rows = Vec::new();
    for &m in &cfg.groups {
        for &k in &cfg.codewords {
            rows.push(bench_one(cfg, m, k)?);
        }
    }
    Ok(rows)
}

fn bench_one(cfg: &BenchConfig, m: usize, k: u32) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64) << 8 ^ m as u64);
    let n = m * cfg.dim;
    let grid = structured_grid(cfg.grid_h, cfg.grid_w, n, cfg.seed);
    let books: Vec<Codebook> = (0..m)
        .map(|_| {
            Codebook::new(
                k as usize,
                cfg.dim,
                (0..k as usize * cfg.dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect::<mcq::Result<_>>()?;
    let ks = vec![k];

    let encode = || -> mcq::Result<(CodeStack, Vec<u8>)> {
        let (_, codes) = quantize_hard(&grid, &books)?;
        let stack = CodeStack {
            levels: vec![codes],
        };
        let tables = build_tables(&stack, &ks)?;
        let payload = encode_indices(&stack, &tables)?;
        Ok((stack, payload))
    };
    // Fixed artifacts for the decode side.
    let (stack, payload) = encode()?;
    let tables = build_tables(&stack, &ks)?;
    let shapes = stack.shapes();
    let decode = || -> mcq::Result<LatentGrid> {
        let decoded = decode_indices(&payload, &tables, &shapes, m)?;
        dequantize(&decoded.levels[0], &books)
    };

    // Each phase is timed in its own steady-state loop; interleaving them
    // would let the encoder's multi-megabyte scratch evict the decoder's
    // working set between samples.
    let mut enc_times = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.warmup {
        std::hint::black_box(encode()?);
    }
    for _ in 0..cfg.runs {
        let t = Instant::now();
        std::hint::black_box(encode()?);
        enc_times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    // Decoding is cheap, so extra repetitions cost little and stabilize
    // the median.
    let dec_runs = cfg.runs.max(60);
    let mut dec_times = Vec::with_capacity(dec_runs);
    for _ in 0..cfg.warmup.max(5) {
        std::hint::black_box(decode()?);
    }
    for _ in 0..dec_runs {
        let t = Instant::now();
        std::hint::black_box(decode()?);
        dec_times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchRow {
        groups: m,
        codewords: k,
        enc_ms: median(&mut enc_times),
        dec_ms: median(&mut dec_times),
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ordinary least squares y = a + b x; returns (intercept, slope, r2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    (intercept, slope, r2)
}
