use super::{
    dot, explicit_residual, norm2, Outcome, RestartRecord, SolveStatus, SolverConfig, SolverError,
    Tracker,
};
use crate::spmv::LinearOperator;

/// Givens rotation zeroing `b` in `(a, b)`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

/// Solves the leading `k x k` upper-triangular block of `h` (column-major,
/// `h[j][i]` is row `i` of column `j`) against `g`. A zero diagonal marks a
/// column whose image already lies in the span of the earlier ones; its
/// coefficient is zero.
fn back_substitute(h: &[Vec<f64>], g: &[f64], k: usize) -> Vec<f64> {
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        if h[i][i] == 0.0 {
            continue;
        }
        let mut s = g[i];
        for j in i + 1..k {
            s -= h[j][i] * y[j];
        }
        y[i] = s / h[i][i];
    }
    y
}

/// Restarted GMRES from `x = 0` with modified Gram-Schmidt and Givens
/// rotations. The iteration counter is global across restarts. A precision
/// switch ends the current cycle.
pub(super) fn run(
    a: &dyn LinearOperator,
    b: &[f64],
    config: &SolverConfig,
    tracker: &mut Tracker,
) -> Result<Outcome, SolverError> {
    let n = b.len();
    let exec = config.exec;
    let restart = config.restart;
    let mut x = vec![0.0; n];
    let mut restarts = Vec::new();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(Outcome {
            status: SolveStatus::Converged,
            iterations: 0,
            final_relative_residual: 0.0,
            restarts,
            x,
        });
    }

    let mut r = b.to_vec();
    let mut rel = 1.0;
    let mut iterations = 0;
    let mut v: Vec<Vec<f64>> = vec![vec![0.0; n]; restart + 1];
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; restart + 1]; restart];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];
    let mut w = vec![0.0; n];

    let status = loop {
        if rel <= config.tol {
            break SolveStatus::Converged;
        }
        if iterations >= config.max_iters {
            break SolveStatus::MaxIterations;
        }
        let beta = rel * b_norm;
        for (vi, ri) in v[0].iter_mut().zip(&r) {
            *vi = ri / beta;
        }
        g.fill(0.0);
        g[0] = beta;

        let mut k = 0;
        let mut estimate = rel;
        let mut abort = None;
        while k < restart && iterations < config.max_iters {
            let j = k;
            a.apply(&v[j], &mut w, tracker.level(), exec)?;
            let image = norm2(&w);
            let col = &mut h[j];
            for i in 0..=j {
                col[i] = dot(&w, &v[i]);
                for (wl, vl) in w.iter_mut().zip(&v[i]) {
                    *wl -= col[i] * vl;
                }
            }
            let sub = norm2(&w);
            col[j + 1] = sub;
            if !sub.is_finite() || col[..=j].iter().any(|c| !c.is_finite()) {
                iterations += 1;
                abort = Some(SolveStatus::NumericalAbort {
                    iteration: iterations,
                    reason: "non-finite Arnoldi coefficient".to_string(),
                });
                break;
            }
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            // A column that vanishes relative to |A v_j| adds nothing to the
            // Krylov image. The swap rotation keeps the residual estimate.
            let (c, s, d) = if col[j].hypot(col[j + 1]) <= f64::EPSILON * image {
                (0.0, 1.0, 0.0)
            } else {
                givens(col[j], col[j + 1])
            };
            cs[j] = c;
            sn[j] = s;
            col[j] = d;
            col[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;

            iterations += 1;
            k += 1;
            estimate = g[j + 1].abs() / b_norm;
            let happy = sub <= f64::EPSILON * image;
            let done = estimate <= config.tol || happy;
            if tracker.record(iterations, estimate, !done).is_some() || done {
                break;
            }
            for (vl, wl) in v[j + 1].iter_mut().zip(&w) {
                *vl = wl / sub;
            }
        }

        let y = back_substitute(&h, &g, k);
        for (j, yj) in y.iter().enumerate() {
            for (xl, vl) in x.iter_mut().zip(&v[j]) {
                *xl += yj * vl;
            }
        }
        if let Some(status) = abort {
            rel = estimate;
            break status;
        }
        rel = explicit_residual(a, b, &x, &mut r, tracker.level(), exec, b_norm)?;
        restarts.push(RestartRecord {
            iteration: iterations,
            estimate,
            explicit: rel,
        });
        if !rel.is_finite() {
            break SolveStatus::NumericalAbort {
                iteration: iterations,
                reason: "non-finite residual".to_string(),
            };
        }
    };

    Ok(Outcome {
        status,
        iterations,
        final_relative_residual: rel,
        restarts,
        x,
    })
}
