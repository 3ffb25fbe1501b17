//! Krylov solvers over any [`LinearOperator`], with optional precision
//! stepping on GSE matrices.
//!
//! Vector arithmetic is always FP64. Only the matrix read inside SpMV
//! changes precision.

mod cg;
mod gmres;
pub mod monitor;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpcodec::PrecisionLevel;
use crate::sparse::GseCsrMatrix;
use crate::spmv::{Execution, LinearOperator, SpmvError};

pub use monitor::{
    escalation_trigger, n_dec, rel_dec, rsd, MonitorError, ResidualMonitor, SteppedState,
    SwitchEvent, SwitchMetrics, Trigger,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("right-hand side has length {found}, expected {expected}")]
    RhsLength { expected: usize, found: usize },
    #[error("precision stepping needs an operator with precision levels")]
    SteppingUnsupported,
    #[error("iteration count must be positive")]
    ZeroIterations,
    #[error("reference time must be finite and non-negative")]
    InvalidTime,
    #[error(transparent)]
    Spmv(#[from] SpmvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cg,
    Gmres,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Cg => "cg",
            SolverKind::Gmres => "gmres",
        })
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cg" => Ok(SolverKind::Cg),
            "gmres" => Ok(SolverKind::Gmres),
            other => Err(format!("unknown solver '{other}' (expected cg or gmres)")),
        }
    }
}

/// Escalation monitor settings. `l` is the first check iteration, `t` the
/// window length and `m` the spacing between checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub l: usize,
    pub t: usize,
    pub m: usize,
    pub rsd_limit: f64,
    pub n_dec_limit: usize,
    pub rel_dec_limit: f64,
}

impl MonitorParams {
    pub fn defaults(kind: SolverKind) -> Self {
        match kind {
            SolverKind::Gmres => Self {
                l: 9000,
                t: 300,
                m: 1500,
                rsd_limit: 0.03,
                n_dec_limit: 80,
                rel_dec_limit: 0.08,
            },
            SolverKind::Cg => Self {
                l: 3000,
                t: 250,
                m: 500,
                rsd_limit: 0.50,
                n_dec_limit: 130,
                rel_dec_limit: 0.45,
            },
        }
    }

    /// Defaults with a different `(l, t, m)`. The decrease-count limit keeps
    /// its ratio to `t`, rounded to nearest.
    pub fn scaled(kind: SolverKind, l: usize, t: usize, m: usize) -> Self {
        let d = Self::defaults(kind);
        let n_dec_limit = ((d.n_dec_limit as f64) * t as f64 / d.t as f64).round() as usize;
        Self {
            l,
            t,
            m,
            n_dec_limit,
            ..d
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if self.t < 2 {
            return bad("monitor window t must be at least 2");
        }
        if self.m == 0 {
            return bad("check spacing m must be at least 1");
        }
        if !self.rsd_limit.is_finite() || !self.rel_dec_limit.is_finite() {
            return bad("monitor limits must be finite");
        }
        Ok(())
    }
}

/// Matrix precision used by a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "level")]
pub enum PrecisionPolicy {
    Fixed(PrecisionLevel),
    /// Start at head-only and escalate on stagnation.
    Stepped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub tol: f64,
    /// Cap on SpMV-bearing iterations (inner iterations for GMRES).
    pub max_iters: usize,
    /// GMRES restart length. Unused by CG.
    pub restart: usize,
    pub monitor: MonitorParams,
    pub precision: PrecisionPolicy,
    pub exec: Execution,
}

impl SolverConfig {
    pub fn cg() -> Self {
        Self {
            kind: SolverKind::Cg,
            tol: 1e-6,
            max_iters: 5000,
            restart: 30,
            monitor: MonitorParams::defaults(SolverKind::Cg),
            precision: PrecisionPolicy::Fixed(PrecisionLevel::Full),
            exec: Execution::default(),
        }
    }

    /// Restart 30 with at most 500 restart cycles.
    pub fn gmres() -> Self {
        Self {
            kind: SolverKind::Gmres,
            tol: 1e-6,
            max_iters: 30 * 500,
            restart: 30,
            monitor: MonitorParams::defaults(SolverKind::Gmres),
            precision: PrecisionPolicy::Fixed(PrecisionLevel::Full),
            exec: Execution::default(),
        }
    }

    pub fn for_kind(kind: SolverKind) -> Self {
        match kind {
            SolverKind::Cg => Self::cg(),
            SolverKind::Gmres => Self::gmres(),
        }
    }

    pub fn stepped(mut self) -> Self {
        self.precision = PrecisionPolicy::Stepped;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "tolerance must be positive and finite, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.kind == SolverKind::Gmres && self.restart == 0 {
            return Err(SolverError::InvalidConfig("restart must be at least 1".into()));
        }
        self.monitor.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// A search direction with non-positive curvature (CG).
    Breakdown { iteration: usize },
    NumericalAbort { iteration: usize, reason: String },
}

impl SolveStatus {
    /// 0 converged, 2 iteration cap, 3 breakdown or numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            SolveStatus::Converged => 0,
            SolveStatus::MaxIterations => 2,
            SolveStatus::Breakdown { .. } | SolveStatus::NumericalAbort { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelIterations {
    pub head_only: usize,
    pub head_tail1: usize,
    pub full: usize,
}

impl LevelIterations {
    fn bump(&mut self, level: PrecisionLevel) {
        match level {
            PrecisionLevel::HeadOnly => self.head_only += 1,
            PrecisionLevel::HeadTail1 => self.head_tail1 += 1,
            PrecisionLevel::Full => self.full += 1,
        }
    }
}

/// GMRES restart boundary: the Givens estimate the cycle ended on and the
/// recomputed `||b - A x|| / ||b||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub iteration: usize,
    pub estimate: f64,
    pub explicit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub status: SolveStatus,
    pub converged: bool,
    pub iterations: usize,
    /// Relative residual the stopping test saw last: the recurrence residual
    /// for CG, the recomputed residual for GMRES.
    pub final_relative_residual: f64,
    /// `||b - A x|| / ||b||` with `A` read at `final_level`.
    pub explicit_relative_residual: f64,
    pub final_level: PrecisionLevel,
    pub level_iterations: LevelIterations,
    pub switch_log: Vec<SwitchEvent>,
    /// The monitor window carries across precision switches.
    pub window_reset_on_switch: bool,
    pub restarts: Vec<RestartRecord>,
    /// Monitored relative residual per iteration.
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    #[serde(skip)]
    pub solution: Vec<f64>,
    pub wall_time_s: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||b - A x|| / b_norm`, leaving `b - A x` in `r`.
pub(crate) fn explicit_residual(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &[f64],
    r: &mut [f64],
    level: PrecisionLevel,
    exec: Execution,
    b_norm: f64,
) -> Result<f64, SpmvError> {
    a.apply(x, r, level, exec)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    Ok(norm2(r) / b_norm)
}

/// Per-iteration bookkeeping shared by both solvers.
pub(crate) struct Tracker {
    stepped: Option<(ResidualMonitor, SteppedState)>,
    level: PrecisionLevel,
    pub(crate) history: Vec<f64>,
    pub(crate) level_iterations: LevelIterations,
}

impl Tracker {
    fn new(config: &SolverConfig) -> Self {
        let (stepped, level) = match config.precision {
            PrecisionPolicy::Fixed(level) => (None, level),
            PrecisionPolicy::Stepped => (
                Some((
                    ResidualMonitor::new(config.monitor.clone()),
                    SteppedState::new(PrecisionLevel::HeadOnly),
                )),
                PrecisionLevel::HeadOnly,
            ),
        };
        Self {
            stepped,
            level,
            history: Vec::new(),
            level_iterations: LevelIterations::default(),
        }
    }

    pub(crate) fn level(&self) -> PrecisionLevel {
        self.level
    }

    /// Records iteration `iteration` (1-based) and returns the new level if
    /// the monitor escalates. Pass `check = false` to record without
    /// checking, e.g. on the converging iteration.
    pub(crate) fn record(
        &mut self,
        iteration: usize,
        residual: f64,
        check: bool,
    ) -> Option<PrecisionLevel> {
        self.history.push(residual);
        self.level_iterations.bump(self.level);
        let (monitor, state) = self.stepped.as_mut()?;
        monitor.push(residual);
        if !check {
            return None;
        }
        let to = state.observe(monitor, iteration)?.to;
        self.level = to;
        Some(to)
    }

    fn switch_log(&self) -> Vec<SwitchEvent> {
        self.stepped
            .as_ref()
            .map(|(_, s)| s.switch_log.clone())
            .unwrap_or_default()
    }
}

pub(crate) struct Outcome {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub restarts: Vec<RestartRecord>,
    pub x: Vec<f64>,
}

/// Solves `A x = b` from `x = 0`.
pub fn solve(
    a: &dyn LinearOperator,
    b: &[f64],
    config: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    config.validate()?;
    if a.rows() != a.cols() {
        return Err(SolverError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.len() != a.rows() {
        return Err(SolverError::RhsLength {
            expected: a.rows(),
            found: b.len(),
        });
    }
    if config.precision == PrecisionPolicy::Stepped && !a.has_levels() {
        return Err(SolverError::SteppingUnsupported);
    }
    let start = Instant::now();
    let mut tracker = Tracker::new(config);
    let out = match config.kind {
        SolverKind::Cg => cg::run(a, b, config, &mut tracker)?,
        SolverKind::Gmres => gmres::run(a, b, config, &mut tracker)?,
    };
    let level = tracker.level();
    let b_norm = norm2(b);
    let explicit = if b_norm == 0.0 {
        0.0
    } else {
        let mut r = vec![0.0; b.len()];
        explicit_residual(a, b, &out.x, &mut r, level, config.exec, b_norm)?
    };
    Ok(SolveReport {
        solver: config.kind,
        converged: out.status == SolveStatus::Converged,
        status: out.status,
        iterations: out.iterations,
        final_relative_residual: out.final_relative_residual,
        explicit_relative_residual: explicit,
        final_level: level,
        level_iterations: tracker.level_iterations,
        switch_log: tracker.switch_log(),
        window_reset_on_switch: false,
        restarts: out.restarts,
        residual_history: tracker.history,
        solution: out.x,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Solves on a GSE matrix starting at head-only precision and escalating
/// per the monitor in `config`.
pub fn stepped_solve(
    a: &GseCsrMatrix,
    b: &[f64],
    config: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    let config = config.clone().stepped();
    solve(a, b, &config)
}

/// Projected time on hardware that moves only the bytes each level needs:
/// the FP16 time per iteration times the GSE iteration count.
pub fn project_hw_time(
    time_fp16: f64,
    iters_fp16: usize,
    iters_gse: usize,
) -> Result<f64, SolverError> {
    if iters_fp16 == 0 {
        return Err(SolverError::ZeroIterations);
    }
    if !(time_fp16.is_finite() && time_fp16 >= 0.0) {
        return Err(SolverError::InvalidTime);
    }
    Ok(time_fp16 / iters_fp16 as f64 * iters_gse as f64)
}
