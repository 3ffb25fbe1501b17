use super::{dot, explicit_residual, norm2, Outcome, SolveStatus, SolverConfig, SolverError, Tracker};
use crate::spmv::LinearOperator;

fn abort(iteration: usize, reason: &str) -> SolveStatus {
    SolveStatus::NumericalAbort {
        iteration,
        reason: reason.to_string(),
    }
}

/// Conjugate gradients from `x = 0`. On a precision switch the residual is
/// recomputed against the new matrix and the search direction restarts
/// from it.
pub(super) fn run(
    a: &dyn LinearOperator,
    b: &[f64],
    config: &SolverConfig,
    tracker: &mut Tracker,
) -> Result<Outcome, SolverError> {
    let n = b.len();
    let exec = config.exec;
    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(Outcome {
            status: SolveStatus::Converged,
            iterations: 0,
            final_relative_residual: 0.0,
            restarts: Vec::new(),
            x,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut rel = 1.0;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        a.apply(&p, &mut ap, tracker.level(), exec)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            status = abort(k, "non-finite curvature p.Ap");
            break;
        }
        if pap <= 0.0 {
            status = SolveStatus::Breakdown { iteration: k };
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / b_norm;
        iterations = k;
        if !rel.is_finite() {
            tracker.record(k, rel, false);
            status = abort(k, "non-finite residual");
            break;
        }
        let converged = rel <= config.tol;
        let switched = tracker.record(k, rel, !converged);
        if converged {
            status = SolveStatus::Converged;
            break;
        }
        if let Some(level) = switched {
            rel = explicit_residual(a, b, &x, &mut r, level, exec, b_norm)?;
            if rel <= config.tol {
                status = SolveStatus::Converged;
                break;
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }

    Ok(Outcome {
        status,
        iterations,
        final_relative_residual: rel,
        restarts: Vec::new(),
        x,
    })
}
