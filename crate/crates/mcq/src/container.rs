//! The `.mcq` compressed-stream container: header, frequency tables, and
//! range-coded payload, all little-endian fixed-width. Codebooks do not
//! travel in the stream; a digest pins the model a stream was made with.

use crate::entropy::FrequencyTable;
use crate::error::{Error, Result};
use crate::quantizer::MultiCodebook;
use crate::transform::{TransformKind, TransformSpec};

pub const STREAM_MAGIC: [u8; 4] = *b"MCQ1";
pub const STREAM_VERSION: u8 = 1;

/// Bounds-checked reader over a byte slice; every failed read is a
/// recoverable truncation error.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn rest(self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} unexpected trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Everything a decoder needs besides the codebook itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub transform: TransformSpec,
    pub levels: u8,
    pub groups: u16,
    pub codewords_per_level: Vec<u32>,
    pub codebook_digest: [u8; 32],
    /// True when the stream was produced with stochastic assignment.
    pub stochastic: bool,
    /// `tables[level][group]`, sized by the level's K.
    pub tables: Vec<Vec<FrequencyTable>>,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Empty("stream dimensions".into()));
        }
        if self.levels == 0 || self.codewords_per_level.len() != self.levels as usize {
            return Err(Error::Config("level count inconsistent".into()));
        }
        if self.channels as usize != self.transform.channels() {
            return Err(Error::Config("channel count inconsistent".into()));
        }
        if self.tables.len() != self.levels as usize {
            return Err(Error::Config("tables do not cover all levels".into()));
        }
        for (l, level) in self.tables.iter().enumerate() {
            if level.len() != self.groups as usize {
                return Err(Error::Config("tables do not cover all groups".into()));
            }
            for t in level {
                t.validate()?;
                if t.symbols() != self.codewords_per_level[l] as usize {
                    return Err(Error::Config(format!(
                        "level {} table has {} symbols, K is {}",
                        l + 1,
                        t.symbols(),
                        self.codewords_per_level[l]
                    )));
                }
            }
        }
        Ok(())
    }

    /// The image side is padded to a multiple of patch * 2^(L-1) before the
    /// transform; the decoder recomputes the same padded geometry.
    pub fn padded_dims(&self) -> (usize, usize) {
        let multiple = self.transform.patch << (self.levels as usize - 1);
        (
            (self.width as usize).div_ceil(multiple) * multiple,
            (self.height as usize).div_ceil(multiple) * multiple,
        )
    }

    /// Per-level latent grid shapes, finest first.
    pub fn level_shapes(&self) -> Vec<(usize, usize)> {
        let (pw, ph) = self.padded_dims();
        let mut h = ph / self.transform.patch;
        let mut w = pw / self.transform.patch;
        let mut shapes = Vec::with_capacity(self.levels as usize);
        for _ in 0..self.levels {
            shapes.push((h, w));
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        shapes
    }

    pub fn matches_codebook(&self, books: &MultiCodebook) -> Result<()> {
        if self.codebook_digest != books.digest() {
            return Err(Error::DigestMismatch);
        }
        Ok(())
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.channels);
        out.push(self.transform.kind.code());
        out.extend_from_slice(&(self.transform.patch as u16).to_le_bytes());
        for &(offset, scale) in &self.transform.normalization {
            out.extend_from_slice(&(offset as f32).to_le_bytes());
            out.extend_from_slice(&(scale as f32).to_le_bytes());
        }
        out.push(self.levels);
        out.extend_from_slice(&self.groups.to_le_bytes());
        for &k in &self.codewords_per_level {
            out.extend_from_slice(&k.to_le_bytes());
        }
        out.extend_from_slice(&self.codebook_digest);
        out.push(self.stochastic as u8);
        for level in &self.tables {
            for table in level {
                for &c in &table.counts {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }
}

/// Serialize a full stream: magic, version, header, then the framed payload.
pub fn write_stream(header: &StreamHeader, payload: &[u8]) -> Result<Vec<u8>> {
    header.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&STREAM_MAGIC);
    out.push(STREAM_VERSION);
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parse a stream produced by [`write_stream`]. Magic, version, and
/// structural consistency are checked here; the codebook digest is compared
/// by the caller once a codebook is loaded.
pub fn read_stream(bytes: &[u8]) -> Result<(StreamHeader, &[u8])> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "stream magic")?;
    if magic != STREAM_MAGIC {
        return Err(Error::BadMagic {
            expected: STREAM_MAGIC,
        });
    }
    let version = cur.u8("stream version")?;
    if version != STREAM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = cur.u32("width")?;
    let height = cur.u32("height")?;
    let channels = cur.u8("channels")?;
    if channels == 0 {
        return Err(Error::Corrupt("zero channels".into()));
    }
    let kind = TransformKind::from_code(cur.u8("transform kind")?)?;
    let patch = cur.u16("patch size")? as usize;
    if patch == 0 {
        return Err(Error::Corrupt("zero patch size".into()));
    }
    let mut normalization = Vec::with_capacity(channels as usize);
    for _ in 0..channels {
        let offset = cur.f32("normalization offset")? as f64;
        let scale = cur.f32("normalization scale")? as f64;
        if !(scale > 0.0) || !offset.is_finite() {
            return Err(Error::Corrupt("bad normalization".into()));
        }
        normalization.push((offset, scale));
    }
    let transform = TransformSpec {
        kind,
        patch,
        normalization,
    };
    let levels = cur.u8("level count")?;
    if levels == 0 {
        return Err(Error::Corrupt("zero levels".into()));
    }
    let groups = cur.u16("group count")?;
    if groups == 0 {
        return Err(Error::Corrupt("zero groups".into()));
    }
    let mut codewords_per_level = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let k = cur.u32("codewords per level")?;
        if k == 0 {
            return Err(Error::Corrupt("zero codewords".into()));
        }
        codewords_per_level.push(k);
    }
    let digest: [u8; 32] = cur.take(32, "codebook digest")?.try_into().unwrap();
    let stochastic = match cur.u8("sampling mode")? {
        0 => false,
        1 => true,
        _ => return Err(Error::Corrupt("bad sampling-mode flag".into())),
    };
    let mut tables = Vec::with_capacity(levels as usize);
    for l in 0..levels as usize {
        let mut level = Vec::with_capacity(groups as usize);
        for _ in 0..groups {
            let mut counts = Vec::with_capacity(codewords_per_level[l] as usize);
            for _ in 0..codewords_per_level[l] {
                let c = cur.u32("frequency count")?;
                if c == 0 {
                    return Err(Error::Corrupt("zero frequency count".into()));
                }
                counts.push(c);
            }
            let table = FrequencyTable { counts };
            table.validate()?;
            level.push(table);
        }
        tables.push(level);
    }
    let header = StreamHeader {
        width,
        height,
        channels,
        transform,
        levels,
        groups,
        codewords_per_level,
        codebook_digest: digest,
        stochastic,
        tables,
    };
    header.validate()?;
    Ok((header, cur.rest()))
}

/// Theoretical bits-per-pixel upper bound: M * sum of bits_l / factor_l^2,
/// where factor_l is the spatial reduction of level l relative to the image.
pub fn sup_bpp(groups: usize, bits_per_level: &[f64], spatial_factors: &[f64]) -> Result<f64> {
    if bits_per_level.len() != spatial_factors.len() {
        return Err(Error::Dimension(format!(
            "{} bit entries vs {} factors",
            bits_per_level.len(),
            spatial_factors.len()
        )));
    }
    if spatial_factors.iter().any(|&f| f < 1.0) {
        return Err(Error::Config("spatial factors must be >= 1".into()));
    }
    Ok(groups as f64
        * bits_per_level
            .iter()
            .zip(spatial_factors)
            .map(|(b, f)| b / (f * f))
            .sum::<f64>())
}

/// Same bound computed from explicit per-level grid shapes:
/// M * sum of log2(K_l) * h_l * w_l / (W * H).
pub fn sup_bpp_for_shapes(
    groups: usize,
    codewords_per_level: &[u32],
    level_shapes: &[(usize, usize)],
    width: usize,
    height: usize,
) -> Result<f64> {
    if codewords_per_level.len() != level_shapes.len() {
        return Err(Error::Dimension("levels vs shapes mismatch".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Empty("image dimensions".into()));
    }
    let pixels = (width * height) as f64;
    Ok(groups as f64
        * codewords_per_level
            .iter()
            .zip(level_shapes)
            .map(|(&k, &(h, w))| (k as f64).log2() * (h * w) as f64 / pixels)
            .sum::<f64>())
}

/// Bits-per-pixel of a serialized stream over the pre-padding dimensions.
pub fn actual_bpp(stream_len_bytes: usize, width: usize, height: usize) -> f64 {
    8.0 * stream_len_bytes as f64 / (width as f64 * height as f64)
}
