//! Group-shared exponents and the sign/index/mantissa (SEM) encoding.
//!
//! A [`SharedExponentTable`] holds a handful of exponents shared by a whole
//! population of FP64 values. Every value is then stored as a 64-bit SEM word:
//! the sign in bit 63 and a *denormalized* significand in bits 62..0 whose
//! explicit leading one sits `d` places below bit 63, where `d` is the gap
//! between the chosen shared exponent and the value's own exponent. The
//! exponent index lives outside the word (in the column index for matrix
//! elements).
//!
//! The word is split into three streams ([`SemSegments`]): a 16-bit head, a
//! 16-bit `tail1` and a 32-bit `tail2`. Reading more streams yields more
//! significand bits without keeping several copies of the data.
//!
//! All conversions are pure shift/mask arithmetic. Encoding truncates, it
//! never rounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported table size. Table sizes are stored as a byte on disk.
pub const MAX_TABLE_SIZE: usize = 128;

/// Largest value a table entry may hold (biased exponent 2046 plus one).
pub const MAX_ENTRY: u16 = 2047;

const SIGN_BIT: u64 = 1 << 63;
const SIGNIFICAND_MASK: u64 = !SIGN_BIT;
const FRACTION_MASK: u64 = (1 << 52) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("no representable values")]
    NoRepresentableValues,
    #[error("non-finite value {}", f64::from_bits(*.bits))]
    NonFinite { bits: u64 },
    #[error("unrepresentable exponent {exponent}: no shared exponent above it")]
    UnrepresentableExponent { exponent: u16 },
    #[error("invalid exponent index {index} (table holds {len} entries)")]
    InvalidExponentIndex { index: usize, len: usize },
    #[error("invalid table size {0}: expected a power of two in 1..={MAX_TABLE_SIZE}")]
    InvalidTableSize(usize),
    #[error("biased exponent {0} outside 1..=2046")]
    InvalidExponent(u16),
    #[error("histogram count for exponent {0} is zero")]
    ZeroCount(u16),
    #[error("shared exponent entry {0} outside 1..=2047")]
    InvalidEntry(u16),
    #[error("duplicate shared exponent entry {0}")]
    DuplicateEntry(u16),
    #[error("table has {len} entries but k_max is {k_max}")]
    TableTooLarge { len: usize, k_max: usize },
    #[error("element index {index} out of bounds (length {len})")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("segment streams have mismatched lengths ({head}, {tail1}, {tail2})")]
    SegmentLengthMismatch { head: usize, tail1: usize, tail2: usize },
}

/// How many SEM streams are read when a value is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionLevel {
    /// Bits 63..48.
    HeadOnly = 1,
    /// Bits 63..32.
    HeadTail1 = 2,
    /// All 64 bits.
    Full = 3,
}

impl PrecisionLevel {
    pub const ALL: [PrecisionLevel; 3] = [Self::HeadOnly, Self::HeadTail1, Self::Full];

    /// Number of SEM bits visible at this level.
    pub fn visible_bits(self) -> u32 {
        match self {
            Self::HeadOnly => 16,
            Self::HeadTail1 => 32,
            Self::Full => 64,
        }
    }

    /// Mask selecting the visible part of a 64-bit SEM word.
    pub fn mask(self) -> u64 {
        match self {
            Self::HeadOnly => 0xFFFF_0000_0000_0000,
            Self::HeadTail1 => 0xFFFF_FFFF_0000_0000,
            Self::Full => u64::MAX,
        }
    }

    pub fn next(self) -> Option<Self> {
        match self {
            Self::HeadOnly => Some(Self::HeadTail1),
            Self::HeadTail1 => Some(Self::Full),
            Self::Full => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::HeadOnly),
            2 => Some(Self::HeadTail1),
            3 => Some(Self::Full),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize - 1
    }
}

impl std::fmt::Display for PrecisionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HeadOnly => "head-only",
            Self::HeadTail1 => "head-tail1",
            Self::Full => "full",
        })
    }
}

/// Biased IEEE 754 exponent field of `x`.
#[inline]
pub fn biased_exponent(x: f64) -> u16 {
    ((x.to_bits() >> 52) & 0x7FF) as u16
}

/// The shared exponents of a value population.
///
/// Each entry is a biased exponent plus one, so that the hidden bit of a
/// value carrying exactly that exponent becomes an explicit one at bit 62.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedExponentTable {
    entries: Vec<u16>,
    k_max: usize,
    ei_bits: u32,
}

fn check_k_max(k_max: usize) -> Result<u32, CodecError> {
    if k_max == 0 || k_max > MAX_TABLE_SIZE || !k_max.is_power_of_two() {
        return Err(CodecError::InvalidTableSize(k_max));
    }
    Ok(k_max.trailing_zeros())
}

impl SharedExponentTable {
    /// Builds a table from explicit entries, in index order.
    pub fn from_entries(entries: Vec<u16>, k_max: usize) -> Result<Self, CodecError> {
        let ei_bits = check_k_max(k_max)?;
        if entries.is_empty() {
            return Err(CodecError::NoRepresentableValues);
        }
        if entries.len() > k_max {
            return Err(CodecError::TableTooLarge {
                len: entries.len(),
                k_max,
            });
        }
        for (i, &e) in entries.iter().enumerate() {
            if e == 0 || e > MAX_ENTRY {
                return Err(CodecError::InvalidEntry(e));
            }
            if entries[..i].contains(&e) {
                return Err(CodecError::DuplicateEntry(e));
            }
        }
        Ok(Self {
            entries,
            k_max,
            ei_bits,
        })
    }

    pub fn entries(&self) -> &[u16] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Width of an exponent index, `log2(k_max)`. Fixed by `k_max` even when
    /// the table holds fewer entries.
    pub fn ei_bits(&self) -> u32 {
        self.ei_bits
    }

    pub fn entry(&self, index: usize) -> Result<u16, CodecError> {
        self.entries
            .get(index)
            .copied()
            .ok_or(CodecError::InvalidExponentIndex {
                index,
                len: self.entries.len(),
            })
    }

    /// Entry with the smallest shift `d = entry - exponent >= 1`, as `(index, d)`.
    pub fn nearest_above(&self, exponent: u16) -> Option<(usize, u32)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > exponent)
            .min_by_key(|(_, &e)| e - exponent)
            .map(|(i, &e)| (i, u32::from(e - exponent)))
    }
}

fn validate_histogram(histogram: &BTreeMap<u16, u64>) -> Result<(), CodecError> {
    if histogram.is_empty() {
        return Err(CodecError::NoRepresentableValues);
    }
    for (&e, &count) in histogram {
        if e == 0 || e > 2046 {
            return Err(CodecError::InvalidExponent(e));
        }
        if count == 0 {
            return Err(CodecError::ZeroCount(e));
        }
    }
    Ok(())
}

/// Selects the `k_max` most frequent exponents (ties toward the larger one),
/// then forces `global_max` in by evicting the least frequent selection.
pub(crate) fn select_shared_exponents(
    histogram: &BTreeMap<u16, u64>,
    global_max: u16,
    k_max: usize,
) -> Result<SharedExponentTable, CodecError> {
    check_k_max(k_max)?;
    let mut ranked: Vec<(u16, u64)> = histogram.iter().map(|(&e, &c)| (e, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
    let mut chosen: Vec<u16> = ranked.iter().take(k_max).map(|&(e, _)| e).collect();
    if !chosen.contains(&global_max) {
        if chosen.len() == k_max {
            chosen.pop();
        }
        chosen.push(global_max);
    }
    SharedExponentTable::from_entries(chosen.into_iter().map(|e| e + 1).collect(), k_max)
}

/// Builds a table from a histogram of biased exponents (zero/subnormal
/// exponent excluded). Entries are ordered by descending frequency.
pub fn build_shared_table(
    histogram: &BTreeMap<u16, u64>,
    k_max: usize,
) -> Result<SharedExponentTable, CodecError> {
    check_k_max(k_max)?;
    validate_histogram(histogram)?;
    let global_max = *histogram.keys().next_back().expect("non-empty");
    select_shared_exponents(histogram, global_max, k_max)
}

/// Like [`build_shared_table`] but with the forced maximum supplied by the
/// caller, for histograms that only sample the population.
pub fn build_shared_table_with_max(
    histogram: &BTreeMap<u16, u64>,
    global_max: u16,
    k_max: usize,
) -> Result<SharedExponentTable, CodecError> {
    check_k_max(k_max)?;
    if global_max == 0 || global_max > 2046 {
        return Err(CodecError::InvalidExponent(global_max));
    }
    if !histogram.is_empty() {
        validate_histogram(histogram)?;
    }
    if let Some(&top) = histogram.keys().next_back() {
        if top > global_max {
            return Err(CodecError::InvalidExponent(top));
        }
    }
    select_shared_exponents(histogram, global_max, k_max)
}

/// One encoded value: the 64-bit SEM word and the table index used for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sem64 {
    pub word: u64,
    pub exp_index: u8,
}

impl Sem64 {
    pub fn head(self) -> u16 {
        (self.word >> 48) as u16
    }

    pub fn tail1(self) -> u16 {
        (self.word >> 32) as u16
    }

    pub fn tail2(self) -> u32 {
        self.word as u32
    }

    /// The word as seen when only the streams of `level` are read.
    pub fn at_level(self, level: PrecisionLevel) -> u64 {
        self.word & level.mask()
    }
}

/// Encodes `x` as a full 64-bit SEM word.
///
/// Zero and subnormal inputs become a signed zero. A shift `d > 63` also
/// flushes to a signed zero.
pub fn encode_fp64(x: f64, table: &SharedExponentTable) -> Result<Sem64, CodecError> {
    let bits = x.to_bits();
    if !x.is_finite() {
        return Err(CodecError::NonFinite { bits });
    }
    let sign = bits & SIGN_BIT;
    let exponent = biased_exponent(x);
    if exponent == 0 {
        return Ok(Sem64 {
            word: sign,
            exp_index: 0,
        });
    }
    let (index, d) = table
        .nearest_above(exponent)
        .ok_or(CodecError::UnrepresentableExponent { exponent })?;
    let exp_index = index as u8;
    if d > 63 {
        return Ok(Sem64 {
            word: sign,
            exp_index,
        });
    }
    let fraction = bits & FRACTION_MASK;
    let aligned = if d <= 11 {
        fraction << (11 - d)
    } else {
        fraction >> (d - 11)
    };
    Ok(Sem64 {
        word: sign | (1u64 << (63 - d)) | aligned,
        exp_index,
    })
}

/// Reconstructs an FP64 value from a (possibly level-truncated) SEM word and
/// the shared exponent it was encoded against. Shift/mask only; never rounds.
#[inline]
pub fn decode_with_shared_exponent(word: u64, shared_exponent: u16) -> f64 {
    let sign = word & SIGN_BIT;
    let significand = word & SIGNIFICAND_MASK;
    if significand == 0 {
        return f64::from_bits(sign);
    }
    let pos = 63 - significand.leading_zeros();
    let d = 63 - pos;
    let exponent = i64::from(shared_exponent) - i64::from(d);
    if exponent <= 0 {
        return f64::from_bits(sign);
    }
    let below = significand & ((1u64 << pos) - 1);
    let fraction = if pos >= 52 {
        below >> (pos - 52)
    } else {
        below << (52 - pos)
    };
    f64::from_bits(sign | ((exponent as u64) << 52) | fraction)
}

/// Decodes a SEM word assembled at some precision level.
pub fn decode(word: u64, exp_index: usize, table: &SharedExponentTable) -> Result<f64, CodecError> {
    let shared = table.entry(exp_index)?;
    Ok(decode_with_shared_exponent(word, shared))
}

/// Decodes `sem` reading only the streams of `level`.
pub fn decode_at(
    sem: Sem64,
    level: PrecisionLevel,
    table: &SharedExponentTable,
) -> Result<f64, CodecError> {
    decode(sem.at_level(level), usize::from(sem.exp_index), table)
}

/// Encodes `x` into a single 16-bit word with the exponent index inline:
/// bit 15 sign, then `ei_bits` of index, then `15 - ei_bits` bits of
/// denormalized mantissa. Values needing a shift wider than the mantissa
/// field flush to a signed zero.
pub fn encode_head16_with_ei(x: f64, table: &SharedExponentTable) -> Result<u16, CodecError> {
    let bits = x.to_bits();
    if !x.is_finite() {
        return Err(CodecError::NonFinite { bits });
    }
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exponent = biased_exponent(x);
    if exponent == 0 {
        return Ok(sign);
    }
    let ei_bits = table.ei_bits();
    let field_bits = 15 - ei_bits;
    let (index, d) = table
        .nearest_above(exponent)
        .ok_or(CodecError::UnrepresentableExponent { exponent })?;
    if d > field_bits {
        return Ok(sign);
    }
    let index_bits = if ei_bits == 0 {
        0
    } else {
        (index as u16) << field_bits
    };
    let mantissa = ((bits & FRACTION_MASK) >> d) >> (37 + ei_bits);
    let mantissa = mantissa as u16 | (1u16 << (field_bits - d));
    Ok(sign | index_bits | mantissa)
}

/// Inverse of [`encode_head16_with_ei`].
pub fn decode_head16_with_ei(word: u16, table: &SharedExponentTable) -> Result<f64, CodecError> {
    let ei_bits = table.ei_bits();
    let field_bits = 15 - ei_bits;
    let index = if ei_bits == 0 {
        0
    } else {
        usize::from((word >> field_bits) & ((1u16 << ei_bits) - 1))
    };
    let field = u64::from(word) & ((1u64 << field_bits) - 1);
    let sign = u64::from(word & 0x8000) << 48;
    // Align the mantissa field so its top bit lands on bit 62.
    let sem = sign | (field << (48 + ei_bits));
    if field == 0 {
        return Ok(f64::from_bits(sign));
    }
    decode(sem, index, table)
}

/// Split SEM words into contiguous head / tail1 / tail2 streams.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SemSegments {
    head: Vec<u16>,
    tail1: Vec<u16>,
    tail2: Vec<u32>,
}

/// Slices every word into its three streams.
pub fn segment(words: &[u64]) -> SemSegments {
    SemSegments {
        head: words.iter().map(|&w| (w >> 48) as u16).collect(),
        tail1: words.iter().map(|&w| (w >> 32) as u16).collect(),
        tail2: words.iter().map(|&w| w as u32).collect(),
    }
}

impl SemSegments {
    pub fn from_parts(head: Vec<u16>, tail1: Vec<u16>, tail2: Vec<u32>) -> Result<Self, CodecError> {
        if head.len() != tail1.len() || head.len() != tail2.len() {
            return Err(CodecError::SegmentLengthMismatch {
                head: head.len(),
                tail1: tail1.len(),
                tail2: tail2.len(),
            });
        }
        Ok(Self { head, tail1, tail2 })
    }

    pub fn len(&self) -> usize {
        self.head.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_empty()
    }

    pub fn head(&self) -> &[u16] {
        &self.head
    }

    pub fn tail1(&self) -> &[u16] {
        &self.tail1
    }

    pub fn tail2(&self) -> &[u32] {
        &self.tail2
    }

    /// Rebuilds element `index` from the streams `level` reads; the absent
    /// low streams are zero.
    pub fn assemble(&self, index: usize, level: PrecisionLevel) -> Result<u64, CodecError> {
        if index >= self.len() {
            return Err(CodecError::IndexOutOfBounds {
                index,
                len: self.len(),
            });
        }
        Ok(self.assemble_unchecked(index, level))
    }

    #[inline(always)]
    pub(crate) fn assemble_unchecked(&self, index: usize, level: PrecisionLevel) -> u64 {
        let head = u64::from(self.head[index]) << 48;
        match level {
            PrecisionLevel::HeadOnly => head,
            PrecisionLevel::HeadTail1 => head | (u64::from(self.tail1[index]) << 32),
            PrecisionLevel::Full => {
                head | (u64::from(self.tail1[index]) << 32) | u64::from(self.tail2[index])
            }
        }
    }
}
