//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gsesem::analysis::{entropy, topk_coverage};
use gsesem::fpcodec::{
    build_shared_table, decode_at, encode_fp64, encode_head16_with_ei, PrecisionLevel,
    SharedExponentTable,
};
use gsesem::gallery;
use gsesem::halfprec::HalfKind;
use gsesem::solvers::{
    escalation_trigger, n_dec, rel_dec, rsd, solve, stepped_solve, MonitorParams,
    PrecisionPolicy, ResidualMonitor, SolverConfig, SolverKind, SwitchMetrics, Trigger,
};
use gsesem::sparse::{
    convert_to_gse, load_gsem, read_gsem, save_gsem, write_gsem, CsrMatrixF64, SparseError,
};
use gsesem::spmv::{spmv_fp64, spmv_gse, spmv_half, HalfCsr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Finite normal value `±m * 2^(e - 1023)` with a uniform 52-bit fraction.
fn value_with_exponent(rng: &mut ChaCha8Rng, biased: u16) -> f64 {
    let sign = u64::from(rng.gen_bool(0.5)) << 63;
    let frac = rng.gen::<u64>() & ((1 << 52) - 1);
    f64::from_bits(sign | (u64::from(biased) << 52) | frac)
}

fn histogram_of(values: &[f64]) -> BTreeMap<u16, u64> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(((v.to_bits() >> 52) & 0x7FF) as u16).or_insert(0) += 1;
    }
    h
}

fn codec_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0u64;
    let mut failures = 0u64;
    for batch in 0..100 {
        let distinct = 1 + batch % 8;
        let exps: Vec<u16> = (0..distinct).map(|_| rng.gen_range(1..2046)).collect();
        let values: Vec<f64> = (0..10_000)
            .map(|_| {
                let e = exps[rng.gen_range(0..exps.len())];
                value_with_exponent(&mut rng, e)
            })
            .collect();
        let table = build_shared_table(&histogram_of(&values), 8).map_err(|e| e.to_string())?;
        for &x in &values {
            let sem = encode_fp64(x, &table).map_err(|e| e.to_string())?;
            let back = decode_at(sem, PrecisionLevel::Full, &table).map_err(|e| e.to_string())?;
            checked += 1;
            if back.to_bits() != x.to_bits() {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(failures == 0, "{failures} of {checked} round trips differ");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{checked} values, 0 failures, {:.2} s", elapsed.as_secs_f64()))
}

/// Line-by-line transcription of the published 16-bit conversion, in 64-bit
/// unsigned arithmetic, for inputs whose shift fits the mantissa field.
fn literal_convert(val_d: u64, sem: &[u16], ei_bit: u32) -> u16 {
    const MAX_52: u64 = (1 << 52) - 1;
    let sign = (val_d >> 48) & 0x8000;
    let exp = (val_d >> 52) & 0x7FF;
    let mut min_diff: u64 = u64::from(u32::MAX);
    let mut exp_idx: u64 = 0;
    let mut k = 0;
    while k < sem.len() {
        if exp + 1 == u64::from(sem[k]) {
            exp_idx = k as u64;
            min_diff = 1;
            break;
        }
        k += 1;
    }
    if k == sem.len() {
        for (jj, &s) in sem.iter().enumerate() {
            let diff = i64::from(s) - exp as i64;
            if diff > 0 && (diff as u64) < min_diff {
                min_diff = diff as u64;
                exp_idx = jj as u64;
            }
        }
    }
    let exp_idx = exp_idx << (15 - ei_bit);
    let mut v = (val_d & MAX_52) >> min_diff;
    v >>= 37 + ei_bit;
    v |= 0x1 << (15 - u64::from(ei_bit) - min_diff);
    (sign | exp_idx | v) as u16
}

fn head16_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut mismatches = 0;
    for &k in &[2usize, 4, 8] {
        let ei_bit = k.trailing_zeros();
        for _ in 0..(100_000 / 3 + 1) {
            // A table of k distinct exponents near a random base; inputs use
            // exponents at most 15 - ei_bit - 1 below some entry.
            let base: u16 = rng.gen_range(40..2000);
            let mut entries: Vec<u16> = Vec::new();
            while entries.len() < k {
                let e = base + rng.gen_range(0..40);
                if !entries.contains(&e) {
                    entries.push(e);
                }
            }
            entries.sort_unstable_by(|a, b| b.cmp(a));
            let table = SharedExponentTable::from_entries(entries.clone(), k).map_err(|e| e.to_string())?;
            let target = entries[rng.gen_range(0..k)];
            let max_d = 15 - ei_bit;
            let d = rng.gen_range(1..=max_d) as u16;
            let x = value_with_exponent(&mut rng, target - d);
            // The literal form has no flush branch: keep inputs whose nearest
            // entry above is within the field.
            let Some((_, nearest)) = table.nearest_above(target - d) else {
                continue;
            };
            if nearest > max_d {
                continue;
            }
            let ours = encode_head16_with_ei(x, &table).map_err(|e| e.to_string())?;
            let theirs = literal_convert(x.to_bits(), &entries, ei_bit);
            checked += 1;
            if ours != theirs {
                mismatches += 1;
            }
        }
    }
    ensure!(checked >= 100_000, "only {checked} inputs checked");
    ensure!(mismatches == 0, "{mismatches} of {checked} mismatches");
    Ok(format!("{checked} inputs over k in {{2,4,8}}, 0 mismatches"))
}

fn truncation_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut bound_checks = 0;
    let table = SharedExponentTable::from_entries(vec![1040, 1024, 1010], 8).map_err(|e| e.to_string())?;
    for _ in 0..100_000 {
        let e = rng.gen_range(990..1040);
        let x = value_with_exponent(&mut rng, e);
        let sem = encode_fp64(x, &table).map_err(|e| e.to_string())?;
        let err = |level| -> Result<f64, String> {
            Ok((decode_at(sem, level, &table).map_err(|e| e.to_string())? - x).abs())
        };
        let (h, t1, f) = (
            err(PrecisionLevel::HeadOnly)?,
            err(PrecisionLevel::HeadTail1)?,
            err(PrecisionLevel::Full)?,
        );
        if !(h >= t1 && t1 >= f) {
            violations += 1;
        }
        let (_, d) = table.nearest_above(e).expect("covered");
        if d <= 14 {
            bound_checks += 1;
            if h / x.abs() >= (2f64).powi(-(14 - d as i32)) {
                violations += 1;
            }
        }
    }
    ensure!(violations == 0, "{violations} violations");
    Ok(format!("100000 encodes, {bound_checks} head-bound checks, 0 violations"))
}

fn spmv_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lanes = 0;
    let mut differing = 0;
    for i in 0..50 {
        // Exponents within a span of 10 keep every shift at most 11, since the
        // largest exponent + 1 is always in the table.
        let lo: i32 = rng.gen_range(-200..200);
        let exps: Vec<i32> = (0..rng.gen_range(1..12)).map(|_| lo + rng.gen_range(0..=10)).collect();
        let k_max = [1, 2, 4, 8][i % 4];
        let m = gallery::random_sparse(100, 100, 0.1, &exps, 1000 + i as u64);
        let g = convert_to_gse(&m, k_max, None).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y64 = spmv_fp64(&m, &x).map_err(|e| e.to_string())?;
        let yg = spmv_gse(&g, &x, PrecisionLevel::Full).map_err(|e| e.to_string())?;
        lanes += y64.len();
        differing += y64.iter().zip(&yg).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    ensure!(differing == 0, "{differing} of {lanes} lanes differ");
    Ok(format!("50 matrices, {lanes} lanes, 0 differing"))
}

fn entropy_topk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let bins = rng.gen_range(1..40);
        let mut hist = BTreeMap::new();
        for _ in 0..bins {
            hist.insert(rng.gen_range(1u16..2047), rng.gen_range(1u64..500));
        }
        let total: u64 = hist.values().sum();

        let direct: f64 = hist
            .values()
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln() / std::f64::consts::LN_2
            })
            .sum();
        let symbols = hist.iter().flat_map(|(&e, &c)| std::iter::repeat_n(e, c as usize));
        let h = entropy(symbols).map_err(|e| e.to_string())?;
        ensure!((h - direct).abs() <= 1e-12, "case {case}: entropy {h} vs {direct}");

        let mut prev = 0.0;
        for k in 1..=bins + 2 {
            let got = topk_coverage(&hist, k).map_err(|e| e.to_string())?;
            // Brute force: repeatedly take the largest remaining bin.
            let mut rest: Vec<u64> = hist.values().copied().collect();
            let mut top = 0;
            for _ in 0..k.min(rest.len()) {
                let (i, _) = rest.iter().enumerate().max_by_key(|(_, &c)| c).expect("non-empty");
                top += rest.swap_remove(i);
            }
            let want = top as f64 / total as f64;
            ensure!((got - want).abs() <= 1e-12, "case {case} k={k}: {got} vs {want}");
            ensure!(got >= prev, "case {case}: coverage decreased at k={k}");
            prev = got;
        }
    }
    Ok("1000 histograms match direct formulas, coverage monotone in k".into())
}

fn fp16_overflow() -> Outcome {
    let m = CsrMatrixF64::from_triplets(2, 2, &[(0, 0, 70000.0), (0, 1, 1.0), (1, 1, 2.5)])
        .map_err(|e| e.to_string())?;
    let x = vec![1.0; 2];
    let half = HalfCsr::from_csr(&m, HalfKind::Fp16);
    let y16 = spmv_half(&half, &x).map_err(|e| e.to_string())?;
    let g = convert_to_gse(&m, 8, None).map_err(|e| e.to_string())?;
    let yh = spmv_gse(&g, &x, PrecisionLevel::HeadOnly).map_err(|e| e.to_string())?;
    ensure!(!y16[0].is_finite(), "FP16 result {} is finite", y16[0]);
    ensure!(yh.iter().all(|v| v.is_finite()), "GSE head-only result {yh:?} not finite");
    Ok(format!("FP16 row 0 = {}, GSE head-only row 0 = {}", y16[0], yh[0]))
}

fn cg_correctness() -> Outcome {
    let start = Instant::now();
    let a = CsrMatrixF64::from_triplets(2, 2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
        .map_err(|e| e.to_string())?;
    let b = [1.0, 2.0];
    // Cramer's rule.
    let det = 4.0 * 3.0 - 1.0 * 1.0;
    let want = [(b[0] * 3.0 - 1.0 * b[1]) / det, (4.0 * b[1] - 1.0 * b[0]) / det];
    let r = solve(&a, &b, &SolverConfig::cg()).map_err(|e| e.to_string())?;
    ensure!(r.converged, "2x2 did not converge: {:?}", r.status);
    for i in 0..2 {
        ensure!((r.solution[i] - want[i]).abs() <= 1e-10, "x[{i}] = {} vs {}", r.solution[i], want[i]);
    }

    let p = gallery::poisson_2d(64);
    let b = spmv_fp64(&p, &vec![1.0; p.rows()]).map_err(|e| e.to_string())?;
    let r2 = solve(&p, &b, &SolverConfig::cg()).map_err(|e| e.to_string())?;
    ensure!(r2.converged && r2.iterations <= 5000, "Poisson: {:?} after {}", r2.status, r2.iterations);
    ensure!(r2.final_relative_residual <= 1e-6, "Poisson residual {}", r2.final_relative_residual);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "2x2 x = ({:.10}, {:.10}); Poisson 64^2 in {} iterations, residual {:.2e}, {:.2} s",
        r.solution[0],
        r.solution[1],
        r2.iterations,
        r2.final_relative_residual,
        elapsed.as_secs_f64()
    ))
}

fn gmres_correctness() -> Outcome {
    let m = gallery::convection_diffusion_2d(32, 20.0, 10.0);
    let b = spmv_fp64(&m, &vec![1.0; m.rows()]).map_err(|e| e.to_string())?;
    let cfg = SolverConfig::gmres();
    let r64 = solve(&m, &b, &cfg).map_err(|e| e.to_string())?;
    ensure!(r64.converged && r64.iterations <= 15000, "{:?} after {}", r64.status, r64.iterations);
    ensure!(r64.final_relative_residual <= 1e-6, "residual {}", r64.final_relative_residual);
    let g = convert_to_gse(&m, 8, None).map_err(|e| e.to_string())?;
    let full = SolverConfig {
        precision: PrecisionPolicy::Fixed(PrecisionLevel::Full),
        ..cfg
    };
    let rg = solve(&g, &b, &full).map_err(|e| e.to_string())?;
    ensure!(rg.iterations == r64.iterations, "GSE Full {} vs FP64 {}", rg.iterations, r64.iterations);
    Ok(format!(
        "{} inner iterations for FP64 and GSE Full, residual {:.2e}",
        r64.iterations, r64.final_relative_residual
    ))
}

fn stepped_escalation() -> Outcome {
    let (m, b) = gallery::stalled_head_only_system(1000, 1);
    let g = convert_to_gse(&m, 8, None).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for kind in [SolverKind::Cg, SolverKind::Gmres] {
        let mut cfg = SolverConfig::for_kind(kind);
        cfg.monitor = MonitorParams::scaled(kind, 30, 10, 10);
        let head_only = SolverConfig {
            precision: PrecisionPolicy::Fixed(PrecisionLevel::HeadOnly),
            ..cfg.clone()
        };
        let h = solve(&g, &b, &head_only).map_err(|e| e.to_string())?;
        ensure!(!h.converged, "{kind}: head-only alone converged");

        let r = stepped_solve(&g, &b, &cfg).map_err(|e| e.to_string())?;
        ensure!(!r.switch_log.is_empty(), "{kind}: no escalation");
        let mut tag = PrecisionLevel::HeadOnly;
        let mut last = 0;
        for ev in &r.switch_log {
            ensure!(ev.from == tag && ev.to.as_u8() == tag.as_u8() + 1, "{kind}: non-monotone step {ev:?}");
            ensure!(ev.iteration > last, "{kind}: switch iterations not increasing");
            tag = ev.to;
            last = ev.iteration;
        }
        ensure!(r.converged, "{kind}: {:?}", r.status);
        ensure!(r.final_relative_residual <= 1e-6, "{kind}: residual {}", r.final_relative_residual);
        ensure!(
            r.explicit_relative_residual <= 1e-6,
            "{kind}: explicit residual {}",
            r.explicit_relative_residual
        );
        let steps: Vec<String> = r.switch_log.iter().map(|e| format!("{}->{}@{}", e.from.as_u8(), e.to.as_u8(), e.iteration)).collect();
        lines.push(format!(
            "{kind}: [{}] {} iterations, residual {:.2e}",
            steps.join(", "),
            r.iterations,
            r.explicit_relative_residual
        ));
    }
    Ok(lines.join("; "))
}

fn switch_metrics() -> Outcome {
    let e = |x: Result<f64, _>| x.map_err(|e: gsesem::solvers::MonitorError| e.to_string());
    ensure!(e(rsd(&[3.0, 1.0]))? == 0.5, "rsd([3,1])");
    let t = 10;
    let falling: Vec<f64> = (0..=t).map(|i| 1.0 - 0.01 * i as f64).collect();
    ensure!(n_dec(&falling).map_err(|e| e.to_string())? == t, "n_dec of a falling window");
    ensure!(e(rel_dec(&[1.0, 0.75, 0.5]))? == 0.5, "rel_dec(1.0 -> 0.5)");

    let p = MonitorParams::defaults(SolverKind::Gmres);
    let check = |w: Vec<f64>, p: &MonitorParams| {
        let mut m = ResidualMonitor::new(p.clone());
        for r in w {
            m.push(r);
        }
        m.evaluate(p.l).map(|(t, _)| t)
    };
    ensure!(check(vec![0.3; p.t + 1], &p) == Some(Trigger::Stagnant), "stagnant window");
    let halving: Vec<f64> = (0..=p.t).map(|i| 0.5f64.powi(i as i32)).collect();
    ensure!(check(halving, &p).is_none(), "halving window escalated");
    let osc = SwitchMetrics { rsd: 0.9, n_dec: p.n_dec_limit - 1, rel_dec: 0.5 };
    ensure!(escalation_trigger(&osc, &p) == Some(Trigger::Fluctuating), "oscillating metrics");

    let g = SolverConfig::gmres();
    let c = SolverConfig::cg();
    ensure!(g.tol == 1e-6 && c.tol == 1e-6, "tolerance defaults");
    ensure!(g.restart == 30 && g.max_iters == 15000 && c.max_iters == 5000, "iteration defaults");
    let gm = &g.monitor;
    ensure!(
        (gm.l, gm.t, gm.m, gm.rsd_limit, gm.n_dec_limit, gm.rel_dec_limit) == (9000, 300, 1500, 0.03, 80, 0.08),
        "GMRES monitor defaults {gm:?}"
    );
    let cm = &c.monitor;
    ensure!(
        (cm.l, cm.t, cm.m, cm.rsd_limit, cm.n_dec_limit, cm.rel_dec_limit) == (3000, 250, 500, 0.50, 130, 0.45),
        "CG monitor defaults {cm:?}"
    );
    Ok("metric examples, three conditions and monitor defaults hold".into())
}

fn persistence() -> Outcome {
    let exps: Vec<i32> = (-12..12).collect();
    let m = gallery::random_sparse(1000, 1000, 0.1, &exps, 11);
    ensure!(m.nnz() == 100_000, "nnz {}", m.nnz());
    let g = convert_to_gse(&m, 16, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.gsem");
    save_gsem(&g, &path).map_err(|e| e.to_string())?;
    let back = load_gsem(&path).map_err(|e| e.to_string())?;
    ensure!(back == g, "loaded matrix differs");
    ensure!(back.to_csr(PrecisionLevel::Full) == g.to_csr(PrecisionLevel::Full), "decoded values differ");

    let mut bytes = Vec::new();
    write_gsem(&g, &mut bytes).map_err(|e| e.to_string())?;
    let mut bad_magic = bytes.clone();
    bad_magic[1] = b'X';
    ensure!(matches!(read_gsem(&bad_magic[..]), Err(SparseError::NotGsem)), "bad magic accepted");
    let mut bad_crc = bytes.clone();
    let mid = bytes.len() / 2;
    bad_crc[mid] ^= 0x10;
    ensure!(
        matches!(read_gsem(&bad_crc[..]), Err(SparseError::ChecksumMismatch { .. })),
        "payload damage not caught by CRC"
    );
    let n = bytes.len();
    let mut bad_trailer = bytes.clone();
    bad_trailer[n - 1] ^= 0xFF;
    ensure!(
        matches!(read_gsem(&bad_trailer[..]), Err(SparseError::ChecksumMismatch { .. })),
        "damaged CRC accepted"
    );
    Ok(format!("{} nnz, {} bytes round-trip; bad magic and CRC rejected", g.nnz(), n))
}

fn main() -> ExitCode {
    let criteria: [Check; 11] = [
        ("codec round trip", codec_round_trip),
        ("16-bit conversion fidelity", head16_fidelity),
        ("truncation monotonicity and head bound", truncation_monotone),
        ("SpMV bit-exact equivalence", spmv_equivalence),
        ("entropy / top-k oracle", entropy_topk_oracle),
        ("FP16 overflow", fp16_overflow),
        ("CG correctness", cg_correctness),
        ("GMRES correctness", gmres_correctness),
        ("stepped escalation", stepped_escalation),
        ("switch metrics", switch_metrics),
        ("persistence", persistence),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
