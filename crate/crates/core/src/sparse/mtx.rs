//! Matrix Market coordinate files.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{CsrMatrixF64, SparseError};

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Pattern,
}

fn parse_err(line: usize, message: impl Into<String>) -> SparseError {
    SparseError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> Result<(Field, bool), SparseError> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format '{}'", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" | "integer" => Field::Real,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    };
    Ok((field, symmetric))
}

/// Parses a coordinate Matrix Market stream. Symmetric inputs are expanded,
/// pattern entries become 1.0 and duplicate coordinates are summed.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<CsrMatrixF64, SparseError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (field, symmetric) = parse_header(&header?)?;

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut seen = 0usize;
    for (lineno, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let Some((rows, cols, nnz)) = size else {
            if tokens.len() != 3 {
                return Err(parse_err(lineno, "expected 'rows cols nnz'"));
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("bad size '{t}'")))
            };
            let dims = (parse(tokens[0])?, parse(tokens[1])?, parse(tokens[2])?);
            if symmetric && dims.0 != dims.1 {
                return Err(parse_err(lineno, "symmetric matrix must be square"));
            }
            size = Some(dims);
            triplets.reserve(if symmetric { 2 * dims.2 } else { dims.2 });
            continue;
        };
        let expected = if field == Field::Pattern { 2 } else { 3 };
        if tokens.len() != expected {
            return Err(parse_err(
                lineno,
                format!("expected {expected} fields, found {}", tokens.len()),
            ));
        }
        if seen == nnz {
            return Err(parse_err(lineno, format!("more than {nnz} entries")));
        }
        let index = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| parse_err(lineno, format!("bad index '{t}'")))
        };
        let (i, j) = (index(tokens[0])?, index(tokens[1])?);
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(SparseError::OutOfRange {
                line: lineno,
                row: i,
                col: j,
                rows,
                cols,
            });
        }
        let value = match field {
            Field::Pattern => 1.0,
            Field::Real => tokens[2]
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("bad value '{}'", tokens[2])))?,
        };
        triplets.push((i - 1, j - 1, value));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, value));
        }
        seen += 1;
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_err(1, "missing size line"))?;
    if seen != nnz {
        return Err(parse_err(0, format!("expected {nnz} entries, found {seen}")));
    }
    CsrMatrixF64::from_triplets(rows, cols, &triplets)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrixF64, SparseError> {
    let file = File::open(path)?;
    parse_matrix_market(BufReader::new(file))
}

/// Writes `m` as a general real coordinate file. Values use the shortest
/// representation that parses back to the same FP64.
pub fn write_matrix_market<W: Write>(m: &CsrMatrixF64, mut out: W) -> Result<(), SparseError> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", m.rows(), m.cols(), m.nnz())?;
    for (r, c, v) in m.triplets() {
        writeln!(out, "{} {} {:?}", r + 1, c + 1, v)?;
    }
    Ok(())
}
