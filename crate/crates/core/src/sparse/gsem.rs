//! GSEM: little-endian binary persistence for [`GseCsrMatrix`].
//!
//! ```text
//! "GSEM" u8 version
//! u64 rows, u64 cols, u64 nnz
//! u8 k_max, u8 ei_bits, u8 ei_in_column, u8 table_len
//! u16 table[table_len]
//! u64 row_ptr[rows + 1]
//! u32 col_idx[nnz]
//! u8  exp_index[nnz]            only when ei_in_column == 0
//! u16 head[nnz], u16 tail1[nnz], u32 tail2[nnz]
//! u32 crc32                     over every byte after the version byte
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GseCsrMatrix, SparseError};
use crate::fpcodec::{SemSegments, SharedExponentTable};

pub const GSEM_MAGIC: &[u8; 4] = b"GSEM";
pub const GSEM_VERSION: u8 = 1;

const PREFIX_LEN: usize = 5;
const HEADER_LEN: usize = 3 * 8 + 4;

fn encode(m: &GseCsrMatrix) -> Vec<u8> {
    let nnz = m.nnz();
    let side = m.side_exponent_indices();
    let table = m.table();
    let mut buf = Vec::with_capacity(
        PREFIX_LEN + HEADER_LEN + 2 * table.len() + 8 * (m.rows() + 1) + 13 * nnz + 4,
    );
    buf.extend_from_slice(GSEM_MAGIC);
    buf.push(GSEM_VERSION);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    buf.extend_from_slice(&(nnz as u64).to_le_bytes());
    buf.push(table.k_max() as u8);
    buf.push(table.ei_bits() as u8);
    buf.push(u8::from(side.is_none()));
    buf.push(table.len() as u8);
    for &e in table.entries() {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for &p in m.row_ptr() {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in m.col_idx_embedded() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    if let Some(side) = side {
        buf.extend_from_slice(side);
    }
    let seg = m.segments();
    for &h in seg.head() {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for &t in seg.tail1() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for &t in seg.tail2() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf[PREFIX_LEN..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SparseError> {
        let end = self.pos.checked_add(n).ok_or(SparseError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(SparseError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SparseError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, SparseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array<const N: usize, T>(
        &mut self,
        count: usize,
        f: impl Fn([u8; N]) -> T,
    ) -> Result<Vec<T>, SparseError> {
        let bytes = self.take(count.checked_mul(N).ok_or(SparseError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(N)
            .map(|c| f(c.try_into().expect("chunk size")))
            .collect())
    }
}

fn to_usize(v: u64, what: &str) -> Result<usize, SparseError> {
    usize::try_from(v).map_err(|_| SparseError::Corrupt(format!("{what} {v} too large")))
}

fn decode(data: &[u8]) -> Result<GseCsrMatrix, SparseError> {
    if data.len() < 4 || &data[..4] != GSEM_MAGIC {
        return Err(SparseError::NotGsem);
    }
    if data.len() < PREFIX_LEN {
        return Err(SparseError::Truncated);
    }
    if data[4] != GSEM_VERSION {
        return Err(SparseError::UnsupportedVersion(data[4]));
    }
    if data.len() < PREFIX_LEN + HEADER_LEN + 4 {
        return Err(SparseError::Truncated);
    }
    let (body, crc_bytes) = data.split_at(data.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&body[PREFIX_LEN..]);

    let mut cur = Cursor {
        data: body,
        pos: PREFIX_LEN,
    };
    let rows = to_usize(cur.u64()?, "rows")?;
    let cols = to_usize(cur.u64()?, "cols")?;
    let nnz = to_usize(cur.u64()?, "nnz")?;
    let k_max = usize::from(cur.u8()?);
    let ei_bits = u32::from(cur.u8()?);
    let ei_in_column = cur.u8()?;
    let table_len = usize::from(cur.u8()?);

    // Size check before any large allocation, so a mangled header reports
    // truncation instead of exhausting memory.
    let side_len = if ei_in_column == 0 { nnz } else { 0 };
    let expected = (|| {
        let mut n = 2 * table_len;
        n = n.checked_add(rows.checked_add(1)?.checked_mul(8)?)?;
        n = n.checked_add(nnz.checked_mul(12)?)?;
        n.checked_add(side_len)
    })()
    .ok_or(SparseError::Truncated)?;
    let remaining = body.len() - cur.pos;
    if remaining < expected {
        return Err(SparseError::Truncated);
    }
    if stored != computed {
        return Err(SparseError::ChecksumMismatch { stored, computed });
    }
    if remaining > expected {
        return Err(SparseError::Corrupt(format!(
            "{} trailing bytes",
            remaining - expected
        )));
    }
    if ei_in_column > 1 {
        return Err(SparseError::Corrupt(format!("ei_in_column flag {ei_in_column}")));
    }

    let entries = cur.array(table_len, u16::from_le_bytes)?;
    let table = SharedExponentTable::from_entries(entries, k_max)?;
    if table.ei_bits() != ei_bits {
        return Err(SparseError::Corrupt(format!(
            "ei_bits {ei_bits} does not match k_max {k_max}"
        )));
    }
    let row_ptr = cur
        .array(rows + 1, u64::from_le_bytes)?
        .into_iter()
        .map(|p| to_usize(p, "row pointer"))
        .collect::<Result<Vec<_>, _>>()?;
    let col_idx = cur.array(nnz, u32::from_le_bytes)?;
    let side = if ei_in_column == 0 {
        Some(cur.take(nnz)?.to_vec())
    } else {
        None
    };
    let head = cur.array(nnz, u16::from_le_bytes)?;
    let tail1 = cur.array(nnz, u16::from_le_bytes)?;
    let tail2 = cur.array(nnz, u32::from_le_bytes)?;
    let segments = SemSegments::from_parts(head, tail1, tail2)?;
    GseCsrMatrix::from_parts(rows, cols, row_ptr, col_idx, side, segments, table)
        .map_err(|e| SparseError::Corrupt(e.to_string()))
}

pub fn write_gsem<W: Write>(m: &GseCsrMatrix, mut out: W) -> Result<(), SparseError> {
    out.write_all(&encode(m))?;
    Ok(())
}

pub fn read_gsem<R: Read>(mut input: R) -> Result<GseCsrMatrix, SparseError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    decode(&data)
}

pub fn save_gsem(m: &GseCsrMatrix, path: impl AsRef<Path>) -> Result<(), SparseError> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load_gsem(path: impl AsRef<Path>) -> Result<GseCsrMatrix, SparseError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{convert_to_gse, CsrMatrixF64};

    fn bytes(m: &GseCsrMatrix) -> Vec<u8> {
        let mut v = Vec::new();
        write_gsem(m, &mut v).unwrap();
        v
    }

    #[test]
    fn identity_round_trip() {
        let g = convert_to_gse(&CsrMatrixF64::identity(2), 8, None).unwrap();
        let data = bytes(&g);
        assert_eq!(&data[..5], b"GSEM\x01");
        assert_eq!(data.len(), 5 + 28 + 2 + 24 + 2 * 12 + 4);
        assert_eq!(read_gsem(&data[..]).unwrap(), g);
    }

    #[test]
    fn side_array_round_trip() {
        let m = CsrMatrixF64::from_triplets(2, 1 << 30, &[(0, 1, 3.0), (1, 7, -0.125)]).unwrap();
        let g = convert_to_gse(&m, 8, None).unwrap();
        assert!(!g.ei_in_column());
        assert_eq!(read_gsem(&bytes(&g)[..]).unwrap(), g);
    }

    #[test]
    fn rejects_damage() {
        let g = convert_to_gse(&CsrMatrixF64::identity(3), 8, None).unwrap();
        let good = bytes(&g);

        let mut bad = good.clone();
        bad[0] = b'X';
        let e = read_gsem(&bad[..]).unwrap_err();
        assert!(matches!(e, SparseError::NotGsem));
        assert_eq!(e.to_string(), "not a GSEM file");

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(read_gsem(&bad[..]), Err(SparseError::UnsupportedVersion(9))));

        let mut bad = good.clone();
        let last_payload = bad.len() - 5;
        bad[last_payload] ^= 1;
        assert!(matches!(read_gsem(&bad[..]), Err(SparseError::ChecksumMismatch { .. })));

        assert!(matches!(read_gsem(&good[..good.len() - 3]), Err(SparseError::Truncated)));
        assert!(matches!(read_gsem(&good[..20]), Err(SparseError::Truncated)));
    }

    #[test]
    fn rejects_out_of_range_exponent_index_even_with_valid_crc() {
        let m = CsrMatrixF64::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 4.0)]).unwrap();
        let g = convert_to_gse(&m, 8, None).unwrap();
        let mut data = bytes(&g);
        // First col_idx word sits after prefix, header, table and row_ptr.
        let at = 5 + 28 + 2 * g.table().len() + 8 * 2;
        data[at + 3] |= 0xE0; // exponent index 7
        let n = data.len();
        let crc = crc32fast::hash(&data[5..n - 4]);
        data[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(read_gsem(&data[..]), Err(SparseError::Corrupt(_))));
    }
}
