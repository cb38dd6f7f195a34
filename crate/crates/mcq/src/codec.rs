//! End-to-end image pipeline tying transform, cascade, entropy coding, and
//! the container together.

use crate::cascade::{decode_cascade_truncated, encode_cascade, CascadeConfig, CodeStack};
use crate::container::{read_stream, write_stream, StreamHeader};
use crate::entropy::{build_tables, decode_indices, encode_indices, estimate_rate_bits};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::quantizer::{MultiCodebook, SamplerConfig, SamplerMode};
use crate::transform::{analysis, crop, pad_to_multiple, synthesis, OriginalDims, TransformSpec};

/// Everything interesting a compression run produces besides the bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressReport {
    /// Whole-stream bits per pixel over the pre-padding dimensions.
    pub bpp: f64,
    /// Coded payload only (no header, tables, or framing).
    pub payload_bpp: f64,
    /// Theoretical upper bound for this image's level geometry.
    pub sup_bpp: f64,
    /// Shannon estimate of the payload in bits.
    pub estimated_bits: f64,
    pub payload_bytes: usize,
    pub stream_bytes: usize,
}

pub struct Encoded {
    pub bytes: Vec<u8>,
    pub report: CompressReport,
    pub codes: CodeStack,
}

/// Compress an image against a codebook. The image is padded so every level
/// halves cleanly; the header records the original size for cropping.
pub fn compress_image(
    image: &Image,
    transform: &TransformSpec,
    books: &MultiCodebook,
    sampler: SamplerConfig,
) -> Result<Encoded> {
    transform.validate()?;
    if image.channels != transform.channels() {
        return Err(Error::Dimension(format!(
            "image has {} channels, transform expects {}",
            image.channels,
            transform.channels()
        )));
    }
    if transform.latent_channels() != books.latent_channels() {
        return Err(Error::Dimension(format!(
            "transform yields {} latent channels, codebook wants {}",
            transform.latent_channels(),
            books.latent_channels()
        )));
    }
    let levels = books.levels();
    let multiple = transform.patch << (levels - 1);
    let (padded, dims) = pad_to_multiple(image, multiple)?;
    let latent = analysis(&padded, transform)?;
    let cfg = CascadeConfig {
        levels,
        groups: books.groups,
        codewords_per_level: books.codewords_per_level(),
        sampler,
    };
    let (codes, _) = encode_cascade(&latent, books, &cfg)?;
    let tables = build_tables(&codes, &cfg.codewords_per_level)?;
    let payload = encode_indices(&codes, &tables)?;
    let estimated_bits = estimate_rate_bits(&codes, &tables)?;
    let header = StreamHeader {
        width: dims.width as u32,
        height: dims.height as u32,
        channels: image.channels as u8,
        transform: transform.clone(),
        levels: levels as u8,
        groups: books.groups as u16,
        codewords_per_level: cfg.codewords_per_level.clone(),
        codebook_digest: books.digest(),
        stochastic: sampler.mode == SamplerMode::Gumbel,
        tables,
    };
    let bytes = write_stream(&header, &payload)?;
    let pixels = (dims.width * dims.height) as f64;
    // Payload net of the per-stream u32 length framing.
    let frames = levels * books.groups * 4;
    let payload_net = payload.len().saturating_sub(frames);
    let report = CompressReport {
        bpp: 8.0 * bytes.len() as f64 / pixels,
        payload_bpp: 8.0 * payload_net as f64 / pixels,
        sup_bpp: crate::container::sup_bpp_for_shapes(
            books.groups,
            &cfg.codewords_per_level,
            &header.level_shapes(),
            dims.width,
            dims.height,
        )?,
        estimated_bits,
        payload_bytes: payload_net,
        stream_bytes: bytes.len(),
    };
    Ok(Encoded {
        bytes,
        report,
        codes,
    })
}

/// Decode a stream produced by [`compress_image`]. `start_level` of 1 uses
/// every level; higher values drop the finer levels for a coarse preview.
pub fn decompress_image(bytes: &[u8], books: &MultiCodebook, start_level: usize) -> Result<Image> {
    let (header, payload) = read_stream(bytes)?;
    header.matches_codebook(books)?;
    let codes = decode_stream_codes(&header, payload)?;
    let latent = decode_cascade_truncated(&codes, books, start_level)?;
    let padded = synthesis(&latent, &header.transform)?;
    crop(
        &padded,
        OriginalDims {
            width: header.width as usize,
            height: header.height as usize,
        },
    )
}

/// Entropy-decode the code stack carried by a parsed stream.
pub fn decode_stream_codes(header: &StreamHeader, payload: &[u8]) -> Result<CodeStack> {
    let codes = decode_indices(
        payload,
        &header.tables,
        &header.level_shapes(),
        header.groups as usize,
    )?;
    codes.validate_indices(&header.codewords_per_level)?;
    Ok(codes)
}

/// Re-encode a (possibly modified) code stack under a parsed header,
/// rebuilding the frequency tables from the codes themselves.
pub fn reencode_stream(header: &StreamHeader, codes: &CodeStack) -> Result<Vec<u8>> {
    let tables = build_tables(codes, &header.codewords_per_level)?;
    let payload = encode_indices(codes, &tables)?;
    let mut header = header.clone();
    header.tables = tables;
    write_stream(&header, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::Codebook;
    use crate::transform::TransformKind;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_books(
        seed: u64,
        levels: usize,
        groups: usize,
        k: usize,
        dim: usize,
    ) -> MultiCodebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiCodebook::new(
            (0..levels)
                .map(|_| {
                    (0..groups)
                        .map(|_| {
                            Codebook::new(
                                k,
                                dim,
                                (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            )
                            .unwrap()
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn compress_decompress_round_trip_shape_and_determinism() {
        // p=4, gray, L=2, M=2 -> n=16, d=8.
        let books = random_books(1, 2, 2, 16, 8);
        let spec = TransformSpec::new(TransformKind::PatchifyDct, 4, 1);
        let img = random_image(2, 37, 29, 1);
        let enc1 = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
        let enc2 = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
        assert_eq!(enc1.bytes, enc2.bytes);
        let dec1 = decompress_image(&enc1.bytes, &books, 1).unwrap();
        let dec2 = decompress_image(&enc1.bytes, &books, 1).unwrap();
        assert_eq!(dec1, dec2);
        assert_eq!((dec1.width, dec1.height, dec1.channels), (37, 29, 1));
    }

    #[test]
    fn payload_respects_sup_bpp_with_flush_slack() {
        let books = random_books(3, 3, 2, 8, 8);
        let spec = TransformSpec::new(TransformKind::Patchify, 4, 1);
        for seed in 0..5 {
            let img = random_image(100 + seed, 41 + seed as usize, 33, 1);
            let enc = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
            let slack = 64.0 * (3 * 2) as f64 / (img.width as f64 * img.height as f64);
            assert!(
                enc.report.payload_bpp <= enc.report.sup_bpp + slack,
                "payload {} vs bound {} + {slack}",
                enc.report.payload_bpp,
                enc.report.sup_bpp
            );
        }
    }

    #[test]
    fn wrong_codebook_is_rejected_by_digest() {
        let books = random_books(5, 1, 1, 4, 16);
        let other = random_books(6, 1, 1, 4, 16);
        let spec = TransformSpec::new(TransformKind::Patchify, 4, 1);
        let img = random_image(7, 16, 16, 1);
        let enc = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
        assert!(matches!(
            decompress_image(&enc.bytes, &other, 1),
            Err(Error::DigestMismatch)
        ));
    }

    #[test]
    fn zero_codeword_books_reconstruct_constant_image() {
        // All-zero codebook rows synthesize to the normalization offset.
        let books = MultiCodebook::new(vec![vec![Codebook::zeros(2, 16)]]).unwrap();
        let spec = TransformSpec::new(TransformKind::Patchify, 4, 1);
        let img = Image::new(8, 8, 1, vec![128; 64]).unwrap();
        let enc = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
        let dec = decompress_image(&enc.bytes, &books, 1).unwrap();
        assert_eq!(dec, img);
    }

    #[test]
    fn truncation_decode_runs_every_start_level() {
        let books = random_books(9, 3, 1, 4, 16);
        let spec = TransformSpec::new(TransformKind::PatchifyDct, 4, 1);
        let img = random_image(11, 32, 32, 1);
        let enc = compress_image(&img, &spec, &books, SamplerConfig::hard()).unwrap();
        for start in 1..=3 {
            let dec = decompress_image(&enc.bytes, &books, start).unwrap();
            assert_eq!((dec.width, dec.height), (32, 32));
        }
    }
}
