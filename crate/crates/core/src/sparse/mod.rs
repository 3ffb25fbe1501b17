//! Sparse matrix containers and their on-disk formats.

mod csr;
mod gse;
mod gsem;
mod mtx;

pub use csr::CsrMatrixF64;
pub use gse::{build_shared_table_sampled, convert_to_gse, GseCsrMatrix, Sampling};
pub use gsem::{load_gsem, read_gsem, save_gsem, write_gsem, GSEM_MAGIC, GSEM_VERSION};
pub use mtx::{parse_matrix_market, read_matrix_market, write_matrix_market};

use thiserror::Error;

use crate::fpcodec::CodecError;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    OutOfRange {
        line: usize,
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid CSR structure: {0}")]
    InvalidStructure(String),
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("block_rows must be at least 1")]
    InvalidBlockRows,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("not a GSEM file")]
    NotGsem,
    #[error("unsupported GSEM version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated GSEM file")]
    Truncated,
    #[error("GSEM checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt GSEM file: {0}")]
    Corrupt(String),
}
