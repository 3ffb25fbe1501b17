//! CSR storage with GSE-SEM values.
//!
//! Exponent indices ride in the top `ei_bits` of each 32-bit column index
//! when the column count leaves room; otherwise they go to a byte-per-element
//! side array.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::csr::validate_structure;
use super::{CsrMatrixF64, SparseError};
use crate::analysis::exponent_histogram;
use crate::fpcodec::{
    self, build_shared_table, build_shared_table_with_max, decode_with_shared_exponent,
    encode_fp64, segment, CodecError, PrecisionLevel, Sem64, SemSegments, SharedExponentTable,
};

/// Row-block sampling for table construction: one uniformly chosen row per
/// block of `block_rows` contiguous rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub block_rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GseCsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    side_exp: Option<Vec<u8>>,
    segments: SemSegments,
    table: SharedExponentTable,
}

/// Whether `cols` leaves `ei_bits` free at the top of a 32-bit index.
pub(crate) fn fits_in_column(cols: usize, ei_bits: u32) -> bool {
    (cols as u64) < (1u64 << (32 - ei_bits))
}

fn column_mask(ei_bits: u32) -> u32 {
    if ei_bits == 0 {
        u32::MAX
    } else {
        (1u32 << (32 - ei_bits)) - 1
    }
}

/// Table built from one random row per block of `block_rows` rows.
///
/// The forced maximum exponent comes from a full scan, so every value of the
/// matrix stays representable.
pub fn build_shared_table_sampled<R: Rng + ?Sized>(
    m: &CsrMatrixF64,
    block_rows: usize,
    k_max: usize,
    rng: &mut R,
) -> Result<SharedExponentTable, SparseError> {
    if block_rows == 0 {
        return Err(SparseError::InvalidBlockRows);
    }
    let global_max = m
        .values()
        .iter()
        .map(|&v| fpcodec::biased_exponent(v))
        .filter(|&e| e != 0 && e != 0x7FF)
        .max()
        .ok_or(CodecError::NoRepresentableValues)?;
    let mut sampled = std::collections::BTreeMap::new();
    for start in (0..m.rows()).step_by(block_rows) {
        let end = (start + block_rows).min(m.rows());
        let r = rng.gen_range(start..end);
        for &v in m.row(r).1 {
            let e = fpcodec::biased_exponent(v);
            if e != 0 && e != 0x7FF {
                *sampled.entry(e).or_insert(0u64) += 1;
            }
        }
    }
    Ok(build_shared_table_with_max(&sampled, global_max, k_max)?)
}

/// Converts `m` to GSE-SEM CSR. The table comes from a full exponent scan,
/// or from row-block sampling when `sampling` is given.
pub fn convert_to_gse(
    m: &CsrMatrixF64,
    k_max: usize,
    sampling: Option<Sampling>,
) -> Result<GseCsrMatrix, SparseError> {
    if let Some((row, col, value)) = m.first_non_finite() {
        return Err(SparseError::NonFinite { row, col, value });
    }
    let table = match sampling {
        None => build_shared_table(&exponent_histogram(m).counts, k_max)?,
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            build_shared_table_sampled(m, s.block_rows, k_max, &mut rng)?
        }
    };
    GseCsrMatrix::encode(m, table)
}

impl GseCsrMatrix {
    /// Encodes every value of `m` against an existing table.
    pub fn encode(m: &CsrMatrixF64, table: SharedExponentTable) -> Result<Self, SparseError> {
        let mut words = Vec::with_capacity(m.nnz());
        let mut exp = Vec::with_capacity(m.nnz());
        for (row, col, value) in m.triplets() {
            let Sem64 { word, exp_index } = encode_fp64(value, &table).map_err(|e| match e {
                CodecError::NonFinite { .. } => SparseError::NonFinite { row, col, value },
                other => other.into(),
            })?;
            words.push(word);
            exp.push(exp_index);
        }
        let ei_bits = table.ei_bits();
        let (col_idx, side_exp) = if fits_in_column(m.cols(), ei_bits) {
            let shift = 32 - ei_bits;
            let embedded = m
                .col_idx()
                .iter()
                .zip(&exp)
                .map(|(&c, &e)| if ei_bits == 0 { c } else { (u32::from(e) << shift) | c })
                .collect();
            (embedded, None)
        } else {
            (m.col_idx().to_vec(), Some(exp))
        };
        Ok(Self {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr: m.row_ptr().to_vec(),
            col_idx,
            side_exp,
            segments: segment(&words),
            table,
        })
    }

    /// Reassembles a matrix from raw parts, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        side_exp: Option<Vec<u8>>,
        segments: SemSegments,
        table: SharedExponentTable,
    ) -> Result<Self, SparseError> {
        let ei_bits = table.ei_bits();
        let embedded = fits_in_column(cols, ei_bits);
        if embedded == side_exp.is_some() {
            return Err(SparseError::InvalidStructure(format!(
                "exponent-index placement does not match the capacity rule for {cols} columns"
            )));
        }
        let nnz = col_idx.len();
        if segments.len() != nnz || side_exp.as_ref().is_some_and(|s| s.len() != nnz) {
            return Err(SparseError::InvalidStructure("array lengths disagree with nnz".into()));
        }
        let mask = column_mask(ei_bits);
        if embedded {
            validate_structure(rows, cols, &row_ptr, &col_idx, |c| c & mask)?;
        } else {
            validate_structure(rows, cols, &row_ptr, &col_idx, |c| c)?;
        }
        let m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            side_exp,
            segments,
            table,
        };
        for j in 0..nnz {
            let (_, e) = m.element(j);
            if e >= m.table.len() {
                return Err(CodecError::InvalidExponentIndex {
                    index: e,
                    len: m.table.len(),
                }
                .into());
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    /// Column indices as stored, exponent index included when embedded.
    pub fn col_idx_embedded(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn side_exponent_indices(&self) -> Option<&[u8]> {
        self.side_exp.as_deref()
    }

    pub fn ei_in_column(&self) -> bool {
        self.side_exp.is_none()
    }

    pub fn segments(&self) -> &SemSegments {
        &self.segments
    }

    pub fn table(&self) -> &SharedExponentTable {
        &self.table
    }

    /// `(column, exponent index)` of stored element `j`.
    #[inline(always)]
    pub fn element(&self, j: usize) -> (usize, usize) {
        let stored = self.col_idx[j];
        match &self.side_exp {
            Some(side) => (stored as usize, usize::from(side[j])),
            None => {
                let ei_bits = self.table.ei_bits();
                if ei_bits == 0 {
                    (stored as usize, 0)
                } else {
                    let shift = 32 - ei_bits;
                    ((stored & column_mask(ei_bits)) as usize, (stored >> shift) as usize)
                }
            }
        }
    }

    /// The full SEM word and index of element `j`.
    pub fn sem(&self, j: usize) -> Sem64 {
        Sem64 {
            word: self.segments.assemble_unchecked(j, PrecisionLevel::Full),
            exp_index: self.element(j).1 as u8,
        }
    }

    /// Value of element `j` reading the streams of `level`.
    #[inline(always)]
    pub fn value_at(&self, j: usize, level: PrecisionLevel) -> f64 {
        let (_, e) = self.element(j);
        let shared = self.table.entries()[e];
        decode_with_shared_exponent(self.segments.assemble_unchecked(j, level), shared)
    }

    /// Decodes the whole matrix at `level` into plain CSR.
    pub fn to_csr(&self, level: PrecisionLevel) -> CsrMatrixF64 {
        let cols: Vec<u32> = (0..self.nnz()).map(|j| self.element(j).0 as u32).collect();
        let values: Vec<f64> = (0..self.nnz()).map(|j| self.value_at(j, level)).collect();
        CsrMatrixF64::new(self.rows, self.cols, self.row_ptr.clone(), cols, values)
            .expect("structure validated at construction")
    }
}
