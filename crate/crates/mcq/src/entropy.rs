//! Static-table range coding of code stacks. Each (level, group) index
//! stream is coded independently against an add-one smoothed frequency
//! table, so any valid index stays decodable.

use std::borrow::Cow;

use crate::cascade::CodeStack;
use crate::error::{Error, Result};
use crate::quantizer::CodeGrid;

const TOP: u32 = 1 << 24;

/// Smoothed symbol counts for one (level, group) stream. Every count is at
/// least one and the cumulative array is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub counts: Vec<u32>,
}

impl FrequencyTable {
    /// Histogram of `symbols` over alphabet size `k`, plus one everywhere.
    pub fn from_symbols(symbols: &[u32], k: usize) -> Self {
        let mut counts = vec![1u32; k];
        for &s in symbols {
            counts[s as usize] += 1;
        }
        Self { counts }
    }

    pub fn symbols(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::Empty("frequency table".into()));
        }
        if self.counts.iter().any(|&c| c == 0) {
            return Err(Error::Corrupt("frequency table has a zero count".into()));
        }
        if self.total() > u32::MAX as u64 {
            return Err(Error::Corrupt("frequency table total exceeds u32".into()));
        }
        Ok(())
    }

    /// Counts as actually fed to the coder: scaled down (keeping every
    /// symbol at >= 1) until the total fits the coder's precision window.
    /// Identical on the encode and decode side by construction; borrows
    /// when no rescale is needed.
    fn coder_counts(&self) -> Cow<'_, [u32]> {
        let mut total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total < TOP as u64 {
            return Cow::Borrowed(&self.counts);
        }
        let mut counts = self.counts.clone();
        while total >= TOP as u64 {
            total = 0;
            for c in counts.iter_mut() {
                *c = (*c / 2).max(1);
                total += *c as u64;
            }
        }
        Cow::Owned(counts)
    }

    /// Shannon cost in bits of coding `symbols` with this table.
    pub fn shannon_bits(&self, symbols: &[u32]) -> f64 {
        let total = self.total() as f64;
        symbols
            .iter()
            .map(|&s| -((self.counts[s as usize] as f64 / total).log2()))
            .sum()
    }
}

/// Per-(level, group) tables for a whole stack, in (level, group) order.
pub fn build_tables(
    codes: &CodeStack,
    codewords_per_level: &[u32],
) -> Result<Vec<Vec<FrequencyTable>>> {
    if codes.levels.len() != codewords_per_level.len() {
        return Err(Error::Dimension(format!(
            "{} levels of codes vs {} K values",
            codes.levels.len(),
            codewords_per_level.len()
        )));
    }
    codes.validate_indices(codewords_per_level)?;
    let mut out = Vec::with_capacity(codes.levels.len());
    for (grid, &k) in codes.levels.iter().zip(codewords_per_level) {
        let mut level = Vec::with_capacity(grid.groups);
        for m in 0..grid.groups {
            level.push(FrequencyTable::from_symbols(
                &grid.group_stream(m),
                k as usize,
            ));
        }
        out.push(level);
    }
    Ok(out)
}

/// Carry-aware byte-oriented range encoder: 64-bit low accumulator, 32-bit
/// range, renormalized by emitting the top byte whenever range < 2^24.
/// The final flush emits five bytes.
struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total < TOP);
        let r = self.range / total;
        self.low += cum as u64 * r as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_size {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.cache = (self.low >> 24) as u8;
            self.cache_size = 0;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            bytes,
            pos: 0,
        };
        // The first byte is the encoder's initial zero cache.
        d.next_byte()?;
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(Error::Truncated("range-coded payload"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Decode one symbol against a prepared table.
    fn decode(&mut self, table: &DecodeTable) -> Result<u32> {
        let r = self.range / table.total;
        let offset = (self.code / r).min(table.total - 1);
        let (symbol, lo, freq) = table.resolve(offset);
        self.code -= lo * r;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }
}

const SLOT_BITS: u32 = 12;

/// Decode-side symbol resolution in O(1) per symbol: a bounded slot table
/// locates the first candidate, then a short contiguous scan of the
/// cumulative boundaries finishes. Each symbol owns at least one offset, so
/// a slot of 2^shift offsets never spans more than 2^shift + 1 symbols.
/// Narrow (u16) tables are used whenever the total permits, keeping the hot
/// working set small even for K = 8192.
enum DecodeTable16Or32 {
    Narrow { slots: Vec<u16>, cum: Vec<u16> },
    Wide { slots: Vec<u32>, cum: Vec<u32> },
}

struct DecodeTable {
    total: u32,
    shift: u32,
    kind: DecodeTable16Or32,
}

impl DecodeTable {
    fn build(counts: &[u32]) -> Self {
        let total: u32 = counts.iter().sum();
        let bits = 32 - (total - 1).leading_zeros();
        let shift = bits.saturating_sub(SLOT_BITS);
        let slot_count = (((total - 1) >> shift) + 1) as usize;
        if total <= u16::MAX as u32 && counts.len() <= u16::MAX as usize {
            let mut cum = Vec::with_capacity(counts.len() + 1);
            let mut acc = 0u16;
            cum.push(0u16);
            for &c in counts {
                acc += c as u16;
                cum.push(acc);
            }
            let mut slots = Vec::with_capacity(slot_count);
            let mut s = 0usize;
            for j in 0..slot_count {
                let offset = ((j as u32) << shift) as u16;
                while cum[s + 1] <= offset {
                    s += 1;
                }
                slots.push(s as u16);
            }
            Self {
                total,
                shift,
                kind: DecodeTable16Or32::Narrow { slots, cum },
            }
        } else {
            let mut cum = Vec::with_capacity(counts.len() + 1);
            let mut acc = 0u32;
            cum.push(0u32);
            for &c in counts {
                acc += c;
                cum.push(acc);
            }
            let mut slots = Vec::with_capacity(slot_count);
            let mut s = 0usize;
            for j in 0..slot_count {
                let offset = (j as u32) << shift;
                while cum[s + 1] <= offset {
                    s += 1;
                }
                slots.push(s as u32);
            }
            Self {
                total,
                shift,
                kind: DecodeTable16Or32::Wide { slots, cum },
            }
        }
    }

    /// Symbol owning `offset`, with its cumulative start and frequency.
    #[inline]
    fn resolve(&self, offset: u32) -> (u32, u32, u32) {
        match &self.kind {
            DecodeTable16Or32::Narrow { slots, cum } => {
                let offset = offset as u16;
                let mut s = slots[(offset >> self.shift) as usize] as usize;
                while cum[s + 1] <= offset {
                    s += 1;
                }
                (s as u32, cum[s] as u32, (cum[s + 1] - cum[s]) as u32)
            }
            DecodeTable16Or32::Wide { slots, cum } => {
                let mut s = slots[(offset >> self.shift) as usize] as usize;
                while cum[s + 1] <= offset {
                    s += 1;
                }
                (s as u32, cum[s], cum[s + 1] - cum[s])
            }
        }
    }
}

fn cumulative(counts: &[u32]) -> Vec<u32> {
    let mut cum = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0u32;
    cum.push(0);
    for &c in counts {
        acc += c;
        cum.push(acc);
    }
    cum
}

/// Range-code one symbol stream against one table. Empty streams produce an
/// empty payload.
pub fn encode_stream(symbols: &[u32], table: &FrequencyTable) -> Result<Vec<u8>> {
    table.validate()?;
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let counts = table.coder_counts();
    let cum = cumulative(&counts);
    let total = cum[cum.len() - 1];
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        let s = s as usize;
        if s >= counts.len() {
            return Err(Error::Corrupt(format!(
                "symbol {s} outside table of {} entries",
                counts.len()
            )));
        }
        enc.encode(cum[s], counts[s], total);
    }
    Ok(enc.finish())
}

/// Exact inverse of [`encode_stream`] given the same table and count.
pub fn decode_stream(payload: &[u8], table: &FrequencyTable, count: usize) -> Result<Vec<u32>> {
    table.validate()?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let counts = table.coder_counts();
    let prepared = DecodeTable::build(&counts);
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(dec.decode(&prepared)?);
    }
    Ok(out)
}

/// Serialize all (level, group) streams: u32 length then bytes, in
/// (level, group) order, little-endian.
pub fn encode_indices(codes: &CodeStack, tables: &[Vec<FrequencyTable>]) -> Result<Vec<u8>> {
    if codes.levels.len() != tables.len() {
        return Err(Error::Dimension("tables do not cover all levels".into()));
    }
    let mut out = Vec::new();
    for (grid, level_tables) in codes.levels.iter().zip(tables) {
        if level_tables.len() != grid.groups {
            return Err(Error::Dimension("tables do not cover all groups".into()));
        }
        for (m, table) in level_tables.iter().enumerate() {
            let payload = encode_stream(&grid.group_stream(m), table)?;
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
        }
    }
    Ok(out)
}

/// Inverse of [`encode_indices`]; `shapes` lists per-level (h, w).
pub fn decode_indices(
    payload: &[u8],
    tables: &[Vec<FrequencyTable>],
    shapes: &[(usize, usize)],
    groups: usize,
) -> Result<CodeStack> {
    if shapes.len() != tables.len() {
        return Err(Error::Dimension("shapes do not cover all levels".into()));
    }
    let mut pos = 0usize;
    let mut levels = Vec::with_capacity(shapes.len());
    for (&(h, w), level_tables) in shapes.iter().zip(tables) {
        if level_tables.len() != groups {
            return Err(Error::Dimension("tables do not cover all groups".into()));
        }
        let mut grid = CodeGrid::zeros(h, w, groups);
        for (m, table) in level_tables.iter().enumerate() {
            if payload.len() < pos + 4 {
                return Err(Error::Truncated("stream length prefix"));
            }
            let len = u32::from_le_bytes(payload[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if payload.len() < pos + len {
                return Err(Error::Truncated("stream payload"));
            }
            let symbols = decode_stream(&payload[pos..pos + len], table, h * w)?;
            pos += len;
            for (p, &s) in symbols.iter().enumerate() {
                grid.indices[p * groups + m] = s;
            }
        }
        levels.push(grid);
    }
    if pos != payload.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after all streams",
            payload.len() - pos
        )));
    }
    Ok(CodeStack { levels })
}

/// Ideal code length in bits: sum over symbols of -log2(count/total).
pub fn estimate_rate_bits(codes: &CodeStack, tables: &[Vec<FrequencyTable>]) -> Result<f64> {
    if codes.levels.len() != tables.len() {
        return Err(Error::Dimension("tables do not cover all levels".into()));
    }
    let mut bits = 0.0;
    for (grid, level_tables) in codes.levels.iter().zip(tables) {
        for (m, table) in level_tables.iter().enumerate() {
            table.validate()?;
            bits += table.shannon_bits(&grid.group_stream(m));
        }
    }
    Ok(bits)
}
