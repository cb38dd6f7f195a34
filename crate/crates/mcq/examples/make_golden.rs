//! Regenerates the golden format vector at `tests/data/golden.mcq` and the
//! codebook it references. Run from the crate root after any deliberate
//! format change, then update docs/FORMAT.md and the digests frozen in
//! `tests/roundtrip.rs`.

use mcq::quantizer::{Codebook, MultiCodebook};
use mcq::{compress_image, Image, SamplerConfig, TransformKind, TransformSpec};
use sha2::{Digest, Sha256};

fn main() {
    let books = golden_books();
    let image = golden_image();
    let spec = TransformSpec::new(TransformKind::Patchify, 4, 1);
    let enc = compress_image(&image, &spec, &books, SamplerConfig::hard()).unwrap();

    std::fs::create_dir_all("crates/mcq/tests/data").unwrap();
    std::fs::write("crates/mcq/tests/data/golden.mcq", &enc.bytes).unwrap();
    books.save("crates/mcq/tests/data/golden.mcqb").unwrap();

    let decoded = mcq::decompress_image(&enc.bytes, &books, 1).unwrap();
    println!("stream bytes: {}", enc.bytes.len());
    println!("stream sha256: {}", hex(&Sha256::digest(&enc.bytes)));
    println!("decoded sha256: {}", hex(&Sha256::digest(&decoded.samples)));
    println!("codebook digest: {}", hex(&books.digest()));
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dyadic-rational codewords so the f32 file payload and all distance
/// arithmetic are exact on every platform.
pub fn golden_books() -> MultiCodebook {
    let mut tables = Vec::new();
    for (level, k) in [(0usize, 4usize), (1, 3)] {
        let mut level_books = Vec::new();
        for group in 0..2usize {
            let mut rows = Vec::with_capacity(k * 8);
            for c in 0..k {
                for d in 0..8 {
                    let v = (c as f64 - 1.5) * 0.25 + d as f64 * 0.03125 + group as f64 * 0.0625
                        - level as f64 * 0.125;
                    rows.push(v);
                }
            }
            level_books.push(Codebook::new(k, 8, rows).unwrap());
        }
        tables.push(level_books);
    }
    MultiCodebook::new(tables).unwrap()
}

pub fn golden_image() -> Image {
    let (w, h) = (12usize, 10usize);
    let samples = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            ((x * 7 + y * 13) % 256) as u8
        })
        .collect();
    Image::new(w, h, 1, samples).unwrap()
}
