use super::SparseError;

/// Compressed sparse row matrix with FP64 values and 32-bit column indices.
///
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrixF64 {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Checks the row-pointer / column-index invariants shared by every CSR
/// container in the crate. `column_of` maps a stored index to its column.
pub(crate) fn validate_structure(
    rows: usize,
    cols: usize,
    row_ptr: &[usize],
    col_idx: &[u32],
    column_of: impl Fn(u32) -> u32,
) -> Result<(), SparseError> {
    let bad = |msg: String| Err(SparseError::InvalidStructure(msg));
    if cols as u64 > 1u64 << 32 {
        return bad(format!("{cols} columns exceed 32-bit indexing"));
    }
    if row_ptr.len() != rows + 1 {
        return bad(format!("row_ptr has {} entries, expected {}", row_ptr.len(), rows + 1));
    }
    if row_ptr[0] != 0 {
        return bad("row_ptr[0] != 0".into());
    }
    if row_ptr[rows] != col_idx.len() {
        return bad(format!(
            "row_ptr[rows] = {} but nnz = {}",
            row_ptr[rows],
            col_idx.len()
        ));
    }
    for r in 0..rows {
        let (start, end) = (row_ptr[r], row_ptr[r + 1]);
        if start > end {
            return bad(format!("row_ptr decreases at row {r}"));
        }
        let mut prev: Option<u32> = None;
        for &stored in &col_idx[start..end] {
            let c = column_of(stored);
            if c as usize >= cols {
                return bad(format!("column {c} out of range in row {r}"));
            }
            if prev.is_some_and(|p| p >= c) {
                return bad(format!("columns not strictly increasing in row {r}"));
            }
            prev = Some(c);
        }
    }
    Ok(())
}

impl CsrMatrixF64 {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if values.len() != col_idx.len() {
            return Err(SparseError::InvalidStructure(format!(
                "{} values for {} column indices",
                values.len(),
                col_idx.len()
            )));
        }
        validate_structure(rows, cols, &row_ptr, &col_idx, |c| c)?;
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets in any order.
    /// Duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(SparseError::OutOfRange {
                    line: 0,
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
        }
        // Stable sort keeps duplicates in input order so their sum is reproducible.
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c as u32);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// `(row, col, value)` for every stored element, in storage order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// Same structure, values mapped through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn first_non_finite(&self) -> Option<(usize, usize, f64)> {
        self.triplets().find(|&(_, _, v)| !v.is_finite())
    }
}
