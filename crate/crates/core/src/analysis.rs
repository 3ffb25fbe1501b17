//! Value-distribution metrics for a sparse matrix: Shannon entropy of the
//! value, exponent and mantissa fields, and top-k exponent coverage.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpcodec::{self, build_shared_table, CodecError};
use crate::sparse::CsrMatrixF64;

pub const DEFAULT_TOPK: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("entropy of an empty multiset is undefined")]
    EmptyInput,
    #[error("empty exponent histogram")]
    EmptyHistogram,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Biased exponent counts over the stored non-zero normal values. Zeros and
/// subnormals are counted apart and never enter `counts`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentHistogram {
    pub counts: BTreeMap<u16, u64>,
    pub zero_or_subnormal: u64,
}

pub fn exponent_histogram(m: &CsrMatrixF64) -> ExponentHistogram {
    let mut h = ExponentHistogram::default();
    for &v in m.values() {
        match fpcodec::biased_exponent(v) {
            0 => h.zero_or_subnormal += 1,
            // Non-finite values are neither representable nor counted.
            0x7FF => {}
            e => *h.counts.entry(e).or_insert(0) += 1,
        }
    }
    h
}

/// Shannon entropy in bits of the multiset `symbols`.
pub fn entropy<T, I>(symbols: I) -> Result<f64, AnalysisError>
where
    T: Eq + Hash,
    I: IntoIterator<Item = T>,
{
    let mut counts: HashMap<T, u64> = HashMap::new();
    for s in symbols {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut counts: Vec<u64> = counts.into_values().collect();
    // Fixed summation order keeps the result independent of hash order.
    counts.sort_unstable();
    entropy_of_counts(&counts)
}

pub fn entropy_of_counts(counts: &[u64]) -> Result<f64, AnalysisError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(AnalysisError::EmptyInput);
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    // A single symbol gives -1 * log2(1) = -0.0.
    Ok(h.max(0.0))
}

/// Fraction of the histogram held by its `k` most frequent exponents.
pub fn topk_coverage(histogram: &BTreeMap<u16, u64>, k: usize) -> Result<f64, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let total: u64 = histogram.values().sum();
    if total == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let mut counts: Vec<u64> = histogram.values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    if k >= counts.len() {
        return Ok(1.0);
    }
    let top: u64 = counts[..k].iter().sum();
    Ok(top as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyTriple {
    pub value: f64,
    pub exponent: f64,
    pub mantissa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub k: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub entropy: EntropyTriple,
    pub histogram: ExponentHistogram,
    pub distinct_exponents: usize,
    pub coverage: Vec<Coverage>,
    pub k_max: usize,
    /// Shared-exponent table (biased exponent + 1) a conversion would use.
    pub recommended_table: Vec<u16>,
}

pub fn entropy_triple(m: &CsrMatrixF64) -> Result<EntropyTriple, AnalysisError> {
    let bits = || m.values().iter().map(|v| v.to_bits());
    Ok(EntropyTriple {
        value: entropy(bits())?,
        exponent: entropy(bits().map(|b| (b >> 52) & 0x7FF))?,
        mantissa: entropy(bits().map(|b| b & ((1 << 52) - 1)))?,
    })
}

/// Entropy triple, exponent histogram, top-k coverage for every `k` in
/// `ks`, and the table a conversion with `k_max` would build.
pub fn analyze_report(
    m: &CsrMatrixF64,
    ks: &[usize],
    k_max: usize,
) -> Result<AnalysisReport, AnalysisError> {
    let entropy = entropy_triple(m)?;
    let histogram = exponent_histogram(m);
    let coverage = ks
        .iter()
        .map(|&k| {
            Ok(Coverage {
                k,
                coverage: topk_coverage(&histogram.counts, k)?,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let recommended_table = build_shared_table(&histogram.counts, k_max)?.entries().to_vec();
    Ok(AnalysisReport {
        rows: m.rows(),
        cols: m.cols(),
        nnz: m.nnz(),
        entropy,
        distinct_exponents: histogram.counts.len(),
        histogram,
        coverage,
        k_max,
        recommended_table,
    })
}

impl AnalysisReport {
    /// `metric,k,value` rows. `k` is empty for metrics that do not take one.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        let mut row = |metric: &str, k: Option<usize>, value: String| {
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            out.push_str(&format!("{metric},{k},{value}\n"));
        };
        row("rows", None, self.rows.to_string());
        row("cols", None, self.cols.to_string());
        row("nnz", None, self.nnz.to_string());
        row("entropy_value", None, format!("{:?}", self.entropy.value));
        row("entropy_exponent", None, format!("{:?}", self.entropy.exponent));
        row("entropy_mantissa", None, format!("{:?}", self.entropy.mantissa));
        row("distinct_exponents", None, self.distinct_exponents.to_string());
        row("k_max", None, self.k_max.to_string());
        row("zero_or_subnormal", None, self.histogram.zero_or_subnormal.to_string());
        for c in &self.coverage {
            row("topk_coverage", Some(c.k), format!("{:?}", c.coverage));
        }
        for (i, e) in self.recommended_table.iter().enumerate() {
            row("shared_exponent", Some(i), e.to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        let h = exponent_histogram(&CsrMatrixF64::identity(5));
        assert_eq!(h.counts, BTreeMap::from([(1023, 5)]));
        let m = CsrMatrixF64::from_triplets(1, 4, &[(0, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0), (0, 3, 0.0)]).unwrap();
        let h = exponent_histogram(&m);
        assert_eq!(h.counts, BTreeMap::from([(1023, 1), (1024, 2)]));
        assert_eq!(h.zero_or_subnormal, 1);
        let empty = CsrMatrixF64::from_triplets(3, 3, &[]).unwrap();
        assert!(exponent_histogram(&empty).counts.is_empty());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy([1, 2, 3, 4]).unwrap(), 2.0);
        assert_eq!(entropy([7, 7, 7]).unwrap(), 0.0);
        let h = entropy(['a', 'a', 'a', 'b']).unwrap();
        assert!((h - 0.811_278_124_459_132_8).abs() < 1e-12);
        assert_eq!(entropy(Vec::<u8>::new()), Err(AnalysisError::EmptyInput));
    }

    #[test]
    fn coverage_examples() {
        let h = BTreeMap::from([(3, 5), (5, 3), (7, 2)]);
        assert_eq!(topk_coverage(&h, 1).unwrap(), 0.5);
        assert_eq!(topk_coverage(&h, 2).unwrap(), 0.8);
        assert_eq!(topk_coverage(&h, 3).unwrap(), 1.0);
        assert_eq!(topk_coverage(&h, 30).unwrap(), 1.0);
        assert_eq!(topk_coverage(&BTreeMap::from([(9, 4)]), 1).unwrap(), 1.0);
        assert_eq!(topk_coverage(&BTreeMap::new(), 1), Err(AnalysisError::EmptyHistogram));
        assert_eq!(topk_coverage(&h, 0), Err(AnalysisError::ZeroK));
    }

    #[test]
    fn report_on_identity_and_two_classes() {
        let r = analyze_report(&CsrMatrixF64::identity(5), &DEFAULT_TOPK, 8).unwrap();
        assert!(r.coverage.iter().all(|c| c.coverage == 1.0));
        assert_eq!(r.entropy.exponent, 0.0);
        assert_eq!(r.recommended_table, vec![1024]);

        let m = CsrMatrixF64::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 4.0)]).unwrap();
        let r = analyze_report(&m, &DEFAULT_TOPK, 8).unwrap();
        assert_eq!(r.entropy.exponent, 1.0);
        assert_eq!(r.coverage[0].coverage, 0.5);
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,k,value\n"));
        assert!(csv.contains("topk_coverage,1,0.5\n"));
    }

    #[test]
    fn report_on_random_matrix_is_finite() {
        let m = crate::gallery::random_sparse(100, 100, 0.1, &[-20, -5, 0, 3, 17], 5);
        assert_eq!(m.nnz(), 1000);
        let r = analyze_report(&m, &DEFAULT_TOPK, 8).unwrap();
        for v in [r.entropy.value, r.entropy.exponent, r.entropy.mantissa] {
            assert!(v.is_finite() && v >= 0.0);
        }
        assert_eq!(r.coverage.len(), DEFAULT_TOPK.len());
        assert!(r.coverage.iter().all(|c| (0.0..=1.0).contains(&c.coverage)));
        let json = serde_json::to_string(&r).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
