//! Deterministic test matrices.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sparse::CsrMatrixF64;

/// 5-point Laplacian on an `n x n` interior grid (Dirichlet), `n^2` unknowns.
pub fn poisson_2d(n: usize) -> CsrMatrixF64 {
    stencil_2d(n, 4.0, [-1.0, -1.0, -1.0, -1.0])
}

/// First-order upwind convection-diffusion on an `n x n` grid, scaled by
/// `h^2` with `h = 1/(n+1)`, for a velocity `(bx, by)` with non-negative
/// components. Non-symmetric.
pub fn convection_diffusion_2d(n: usize, bx: f64, by: f64) -> CsrMatrixF64 {
    let h = 1.0 / (n as f64 + 1.0);
    let (cx, cy) = (bx * h, by * h);
    stencil_2d(n, 4.0 + cx + cy, [-1.0 - cx, -1.0, -1.0 - cy, -1.0])
}

/// Neighbour weights in the order west, east, south, north.
fn stencil_2d(n: usize, center: f64, nb: [f64; 4]) -> CsrMatrixF64 {
    let mut t = Vec::with_capacity(5 * n * n);
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            if j > 0 {
                t.push((row, row - n, nb[2]));
            }
            if i > 0 {
                t.push((row, row - 1, nb[0]));
            }
            t.push((row, row, center));
            if i + 1 < n {
                t.push((row, row + 1, nb[1]));
            }
            if j + 1 < n {
                t.push((row, row + n, nb[3]));
            }
        }
    }
    CsrMatrixF64::from_triplets(n * n, n * n, &t).expect("valid stencil")
}

/// Random matrix with exactly `round(density * cols)` entries per row.
/// Each value is `±m * 2^e` with `m` uniform in `[1, 2)` and `e` drawn from
/// `exponents`.
pub fn random_sparse(
    rows: usize,
    cols: usize,
    density: f64,
    exponents: &[i32],
    seed: u64,
) -> CsrMatrixF64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_row = ((density * cols as f64).round() as usize).min(cols);
    let mut t = Vec::with_capacity(rows * per_row);
    for r in 0..rows {
        for c in sample(&mut rng, cols, per_row) {
            t.push((r, c, random_value(&mut rng, exponents)));
        }
    }
    CsrMatrixF64::from_triplets(rows, cols, &t).expect("distinct columns")
}

pub fn random_value<R: Rng + ?Sized>(rng: &mut R, exponents: &[i32]) -> f64 {
    let e = exponents[rng.gen_range(0..exponents.len())];
    let m: f64 = rng.gen_range(1.0..2.0);
    let s = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    s * m * (2f64).powi(e)
}

/// Symmetric, strictly diagonally dominant with a positive diagonal, hence
/// positive definite.
pub fn random_spd(n: usize, per_row: usize, seed: u64) -> CsrMatrixF64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    let mut diag = vec![1.0; n];
    for r in 0..n {
        for c in sample(&mut rng, n, per_row.min(n)) {
            if c <= r {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            t.push((r, c, v));
            t.push((c, r, v));
            diag[r] += v.abs();
            diag[c] += v.abs();
        }
    }
    for (r, d) in diag.into_iter().enumerate() {
        t.push((r, r, d));
    }
    CsrMatrixF64::from_triplets(n, n, &t).expect("valid")
}

/// A system whose head-only form is singular, so low-precision iterations
/// stall well above any useful tolerance.
///
/// The matrix is the graph Laplacian of a ring plus a random perfect
/// matching with weight 1/8, plus `2^-14` on the diagonal. Diagonals lie in
/// `[2, 4)` where the head resolves steps of `2^-13`, so head-only drops the
/// shift and sees the singular Laplacian; head+tail1 keeps it exactly. The
/// remaining spectrum is well separated from zero, which lets both CG and
/// restarted GMRES converge quickly once the shift is visible. The
/// right-hand side is `0.5 + U(-1, 1)`, so it has a component along the
/// head-only null space (the constant vector).
pub fn stalled_head_only_system(n: usize, seed: u64) -> (CsrMatrixF64, Vec<f64>) {
    let weight = 0.125;
    let shift = (2f64).powi(-14);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::with_capacity(5 * n);
    let mut diag = vec![0.0; n];
    let mut link = |t: &mut Vec<_>, a: usize, b: usize, w: f64| {
        t.push((a, b, -w));
        t.push((b, a, -w));
        diag[a] += w;
        diag[b] += w;
    };
    for i in 0..n {
        let j = (i + 1) % n;
        if j != i && !(n == 2 && i == 1) {
            link(&mut t, i, j, 1.0);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for p in order.chunks_exact(2) {
        let (a, b) = (p[0], p[1]);
        if (a + 1) % n != b && (b + 1) % n != a {
            link(&mut t, a, b, weight);
        }
    }
    for (i, d) in diag.into_iter().enumerate() {
        t.push((i, i, d + shift));
    }
    let m = CsrMatrixF64::from_triplets(n, n, &t).expect("valid");
    let b = (0..n).map(|_| 0.5 + rng.gen_range(-1.0..1.0)).collect();
    (m, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_shape() {
        let m = poisson_2d(3);
        assert_eq!(m.rows(), 9);
        assert_eq!(m.nnz(), 9 + 2 * 12);
        // Interior node has all four neighbours.
        assert_eq!(m.row(4).1, &[-1.0, -1.0, 4.0, -1.0, -1.0]);
    }

    #[test]
    fn convection_is_nonsymmetric() {
        let m = convection_diffusion_2d(4, 10.0, 10.0);
        let (cols, vals) = m.row(5);
        assert_eq!(cols, &[1, 4, 5, 6, 9]);
        assert!(vals[1] != vals[3]);
    }

    #[test]
    fn random_sparse_is_reproducible() {
        let a = random_sparse(20, 30, 0.2, &[0, 3], 1);
        assert_eq!(a, random_sparse(20, 30, 0.2, &[0, 3], 1));
        assert_eq!(a.nnz(), 20 * 6);
    }

    #[test]
    fn stalled_system_is_singular_at_head_only() {
        use crate::fpcodec::PrecisionLevel;
        use crate::sparse::convert_to_gse;
        let (m, b) = stalled_head_only_system(50, 1);
        assert_eq!(b.len(), 50);
        let swapped: Vec<_> = m.triplets().map(|(r, c, v)| (c, r, v)).collect();
        assert_eq!(CsrMatrixF64::from_triplets(50, 50, &swapped).unwrap(), m);
        let g = convert_to_gse(&m, 8, None).unwrap();
        let head = g.to_csr(PrecisionLevel::HeadOnly);
        for r in 0..50 {
            assert_eq!(head.row(r).1.iter().sum::<f64>(), 0.0);
        }
        assert_eq!(g.to_csr(PrecisionLevel::HeadTail1), m);
    }
}
