//! Lossy image/tensor codec built on cascaded multi-codebook vector
//! quantization: latent grids are quantized level by level against learned
//! sub-codebooks, residuals flow down a resolution pyramid, and the chosen
//! indices are range-coded against per-(level, group) frequency tables.
//!
//! The crate is organized around the pipeline:
//!
//! - [`transform`]: fixed invertible patch transforms between images and
//!   latent grids, plus the 2x resampling operators.
//! - [`quantizer`]: codebook storage, hard and stochastic assignment,
//!   O(1) dequantization.
//! - [`cascade`]: the recursive multi-level encode/decode.
//! - [`entropy`]: static-table range coding of index streams.
//! - [`container`]: the `.mcq` stream format and rate bounds.
//! - [`trainer`]: codebook learning (straight-through Gumbel SGD and a
//!   k-means baseline) with synthetic mixture data for validation.
//! - [`metrics`]: PSNR, MS-SSIM, and Bjontegaard-delta rate.
//! - [`codec`]: the end-to-end compress/decompress facade.

pub mod cascade;
pub mod codec;
pub mod container;
pub mod entropy;
pub mod error;
pub mod grid;
pub mod image;
pub mod metrics;
pub mod quantizer;
pub mod trainer;
pub mod transform;

pub use cascade::{CascadeConfig, CodeStack};
pub use codec::{compress_image, decompress_image};
pub use error::{Error, Result};
pub use grid::LatentGrid;
pub use image::Image;
pub use quantizer::{CodeGrid, Codebook, MultiCodebook, SamplerConfig, SamplerMode};
pub use transform::{TransformKind, TransformSpec};
