//! Sparse matrix-vector products.
//!
//! Every operator accumulates in FP64, left to right in ascending column
//! order within a row. Parallelism is only ever across rows, so results are
//! bitwise identical between [`Execution::Sequential`] and
//! [`Execution::Parallel`].

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpcodec::{decode_with_shared_exponent, PrecisionLevel};
use crate::halfprec::HalfKind;
use crate::sparse::{CsrMatrixF64, GseCsrMatrix};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows handed to one rayon task at minimum.
#[cfg(feature = "parallel")]
const MIN_ROWS_PER_TASK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpmvError {
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// How rows are scheduled. `Parallel` degrades to sequential when the crate
/// is built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), SpmvError> {
    if expected != found {
        return Err(SpmvError::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

fn for_each_row<F>(y: &mut [f64], exec: Execution, row: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => y
            .par_iter_mut()
            .with_min_len(MIN_ROWS_PER_TASK)
            .enumerate()
            .for_each(|(i, yi)| *yi = row(i)),
        _ => y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i)),
    }
}

/// A square or rectangular matrix the solvers and benchmarks can apply.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn nnz(&self) -> usize;

    /// Whether `level` changes the result. Fixed-format operators ignore it.
    fn has_levels(&self) -> bool {
        false
    }

    /// `y = A x` reading the matrix at `level`.
    fn apply(
        &self,
        x: &[f64],
        y: &mut [f64],
        level: PrecisionLevel,
        exec: Execution,
    ) -> Result<(), SpmvError>;
}

impl LinearOperator for CsrMatrixF64 {
    fn rows(&self) -> usize {
        CsrMatrixF64::rows(self)
    }

    fn cols(&self) -> usize {
        CsrMatrixF64::cols(self)
    }

    fn nnz(&self) -> usize {
        CsrMatrixF64::nnz(self)
    }

    fn apply(
        &self,
        x: &[f64],
        y: &mut [f64],
        _level: PrecisionLevel,
        exec: Execution,
    ) -> Result<(), SpmvError> {
        check_len("x", CsrMatrixF64::cols(self), x.len())?;
        check_len("y", CsrMatrixF64::rows(self), y.len())?;
        let (ptr, cols, vals) = (self.row_ptr(), self.col_idx(), self.values());
        for_each_row(y, exec, |i| {
            let mut sum = 0.0;
            for j in ptr[i]..ptr[i + 1] {
                sum += vals[j] * x[cols[j] as usize];
            }
            sum
        });
        Ok(())
    }
}

#[inline(always)]
fn gse_row<const LEVEL: u8>(m: &GseCsrMatrix, i: usize, x: &[f64]) -> f64 {
    let level = match LEVEL {
        1 => PrecisionLevel::HeadOnly,
        2 => PrecisionLevel::HeadTail1,
        _ => PrecisionLevel::Full,
    };
    let entries = m.table().entries();
    let seg = m.segments();
    let ptr = m.row_ptr();
    let mut sum = 0.0;
    for j in ptr[i]..ptr[i + 1] {
        let (col, e) = m.element(j);
        let v = decode_with_shared_exponent(seg.assemble_unchecked(j, level), entries[e]);
        sum += v * x[col];
    }
    sum
}

impl LinearOperator for GseCsrMatrix {
    fn rows(&self) -> usize {
        GseCsrMatrix::rows(self)
    }

    fn cols(&self) -> usize {
        GseCsrMatrix::cols(self)
    }

    fn nnz(&self) -> usize {
        GseCsrMatrix::nnz(self)
    }

    fn has_levels(&self) -> bool {
        true
    }

    fn apply(
        &self,
        x: &[f64],
        y: &mut [f64],
        level: PrecisionLevel,
        exec: Execution,
    ) -> Result<(), SpmvError> {
        check_len("x", GseCsrMatrix::cols(self), x.len())?;
        check_len("y", GseCsrMatrix::rows(self), y.len())?;
        match level {
            PrecisionLevel::HeadOnly => for_each_row(y, exec, |i| gse_row::<1>(self, i, x)),
            PrecisionLevel::HeadTail1 => for_each_row(y, exec, |i| gse_row::<2>(self, i, x)),
            PrecisionLevel::Full => for_each_row(y, exec, |i| gse_row::<3>(self, i, x)),
        }
        Ok(())
    }
}

/// CSR whose values are stored as FP16 or BF16 and widened to FP64 on load.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfCsr {
    kind: HalfKind,
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<u16>,
    overflowed: usize,
}

impl HalfCsr {
    /// Rounds every value to `kind` (nearest, ties to even). Finite values
    /// that overflow become infinities and are counted, not rejected.
    pub fn from_csr(m: &CsrMatrixF64, kind: HalfKind) -> Self {
        let values: Vec<u16> = m.values().iter().map(|&v| kind.encode(v)).collect();
        let overflowed = m
            .values()
            .iter()
            .zip(&values)
            .filter(|(v, &h)| v.is_finite() && !kind.decode(h).is_finite())
            .count();
        Self {
            kind,
            rows: m.rows(),
            cols: m.cols(),
            row_ptr: m.row_ptr().to_vec(),
            col_idx: m.col_idx().to_vec(),
            values,
            overflowed,
        }
    }

    pub fn kind(&self) -> HalfKind {
        self.kind
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    /// Number of finite inputs that rounded to infinity.
    pub fn overflowed(&self) -> usize {
        self.overflowed
    }
}

impl LinearOperator for HalfCsr {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn nnz(&self) -> usize {
        self.values.len()
    }

    fn apply(
        &self,
        x: &[f64],
        y: &mut [f64],
        _level: PrecisionLevel,
        exec: Execution,
    ) -> Result<(), SpmvError> {
        check_len("x", self.cols, x.len())?;
        check_len("y", self.rows, y.len())?;
        let kind = self.kind;
        for_each_row(y, exec, |i| {
            let mut sum = 0.0;
            for j in self.row_ptr[i]..self.row_ptr[i + 1] {
                sum += kind.decode(self.values[j]) * x[self.col_idx[j] as usize];
            }
            sum
        });
        Ok(())
    }
}

fn apply_new(
    op: &dyn LinearOperator,
    x: &[f64],
    level: PrecisionLevel,
) -> Result<Vec<f64>, SpmvError> {
    let mut y = vec![0.0; op.rows()];
    op.apply(x, &mut y, level, Execution::default())?;
    Ok(y)
}

pub fn spmv_fp64(m: &CsrMatrixF64, x: &[f64]) -> Result<Vec<f64>, SpmvError> {
    apply_new(m, x, PrecisionLevel::Full)
}

pub fn spmv_gse(m: &GseCsrMatrix, x: &[f64], level: PrecisionLevel) -> Result<Vec<f64>, SpmvError> {
    apply_new(m, x, level)
}

pub fn spmv_half(m: &HalfCsr, x: &[f64]) -> Result<Vec<f64>, SpmvError> {
    apply_new(m, x, PrecisionLevel::Full)
}

/// Largest absolute difference. A non-finite lane makes the error `+inf`
/// and `index` points at the first such lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxAbsError {
    pub value: f64,
    pub index: Option<usize>,
}

pub fn max_abs_error(test: &[f64], reference: &[f64]) -> Result<MaxAbsError, SpmvError> {
    check_len("test vector", reference.len(), test.len())?;
    let mut worst = MaxAbsError {
        value: 0.0,
        index: None,
    };
    for (i, (&a, &b)) in test.iter().zip(reference).enumerate() {
        let d = (a - b).abs();
        if !d.is_finite() {
            return Ok(MaxAbsError {
                value: f64::INFINITY,
                index: Some(i),
            });
        }
        if worst.index.is_none() || d > worst.value {
            worst = MaxAbsError {
                value: d,
                index: Some(i),
            };
        }
    }
    Ok(worst)
}

/// Two flops (multiply and add) per stored element.
pub fn gflops(nnz: usize, seconds: f64) -> f64 {
    2.0 * nnz as f64 / seconds / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub repeats: usize,
    pub median_ns: f64,
    pub mean_ns: f64,
}

/// Times `repeats` calls of `f` on a monotonic clock.
pub fn time_repeats(repeats: usize, mut f: impl FnMut()) -> Timing {
    let repeats = repeats.max(1);
    let mut samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let mid = repeats / 2;
    let median_ns = if repeats % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    };
    Timing {
        repeats,
        median_ns,
        mean_ns: samples.iter().sum::<f64>() / repeats as f64,
    }
}
