//! `gsesem`: analyze, convert, benchmark and solve sparse matrices stored
//! with group-shared exponents.

mod config;

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use gsesem::analysis::{analyze_report, exponent_histogram, DEFAULT_TOPK};
use gsesem::halfprec::HalfKind;
use gsesem::solvers::{solve, MonitorParams, PrecisionPolicy, SolverConfig, SolverKind};
use gsesem::sparse::{convert_to_gse, load_gsem, read_matrix_market, save_gsem, GSEM_MAGIC};
use gsesem::spmv::{gflops, max_abs_error, time_repeats, Execution, HalfCsr, LinearOperator};
use gsesem::{CsrMatrixF64, GseCsrMatrix, PrecisionLevel};

use config::ConfigFile;

const DEFAULT_K: usize = 8;
const DEFAULT_REPEATS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Fp64,
    Fp16,
    Bf16,
    GseHead,
    GseHt1,
    GseFull,
}

impl Format {
    fn gse_level(self) -> Option<PrecisionLevel> {
        match self {
            Format::GseHead => Some(PrecisionLevel::HeadOnly),
            Format::GseHt1 => Some(PrecisionLevel::HeadTail1),
            Format::GseFull => Some(PrecisionLevel::Full),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Format::Fp64 => "fp64",
            Format::Fp16 => "fp16",
            Format::Bf16 => "bf16",
            Format::GseHead => "gse-head",
            Format::GseHt1 => "gse-ht1",
            Format::GseFull => "gse-full",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fp64" => Format::Fp64,
            "fp16" => Format::Fp16,
            "bf16" => Format::Bf16,
            "gse-head" => Format::GseHead,
            "gse-ht1" => Format::GseHt1,
            "gse-full" => Format::GseFull,
            other => {
                return Err(format!(
                    "unknown format '{other}' (expected fp64, fp16, bf16, gse-head, gse-ht1 or gse-full)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Emit {
    Json,
    Csv,
}

impl FromStr for Emit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Emit::Json),
            "csv" => Ok(Emit::Csv),
            other => Err(format!("unknown report kind '{other}' (expected json or csv)")),
        }
    }
}

#[derive(Parser)]
#[command(name = "gsesem", version, about = "Group-shared-exponent sparse matrix toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy and top-k exponent coverage of a Matrix Market file.
    Analyze(AnalyzeArgs),
    /// Convert a Matrix Market file to a GSEM file.
    Convert(ConvertArgs),
    /// Time one SpMV format with x = all-ones and compare it with FP64.
    Spmv(SpmvArgs),
    /// Run CG or GMRES and write a solve report.
    Solve(SolveArgs),
}

#[derive(Args)]
struct Common {
    /// key = value file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report destination (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Report kind: json or csv.
    #[arg(long)]
    emit: Option<Emit>,
}

#[derive(Args)]
struct AnalyzeArgs {
    matrix: PathBuf,
    /// Table size used for the recommended shared-exponent table.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ConvertArgs {
    matrix: PathBuf,
    /// Maximum number of shared exponents (power of two, at most 128).
    #[arg(long)]
    k: Option<usize>,
    /// GSEM file to write.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SpmvArgs {
    /// Matrix Market or GSEM file.
    matrix: PathBuf,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Table size when converting a Matrix Market file.
    #[arg(long)]
    k: Option<usize>,
    /// Leave timing columns empty so reports are reproducible byte for byte.
    #[arg(long)]
    omit_timing: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SolveArgs {
    /// Matrix Market or GSEM file.
    matrix: PathBuf,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    format: Option<Format>,
    /// Start at head-only precision and escalate on stagnation (GSE formats).
    #[arg(long)]
    stepped: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    restart: Option<usize>,
    /// First check iteration. Setting l, t or m rescales n-dec-limit with t.
    #[arg(long)]
    l: Option<usize>,
    /// Monitor window length.
    #[arg(long)]
    t: Option<usize>,
    /// Iterations between checks.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    rsd_limit: Option<f64>,
    #[arg(long)]
    n_dec_limit: Option<usize>,
    #[arg(long)]
    rel_dec_limit: Option<f64>,
    /// Table size when converting a Matrix Market file.
    #[arg(long)]
    k: Option<usize>,
    /// Right-hand side, whitespace-separated values. Defaults to A * ones.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Drop the wall-clock field so reports are reproducible byte for byte.
    #[arg(long)]
    omit_timing: bool,
    #[command(flatten)]
    common: Common,
}

/// A matrix read from disk. GSEM input keeps its own table.
struct Input {
    csr: CsrMatrixF64,
    gse: Option<GseCsrMatrix>,
}

fn load_input(path: &Path) -> Result<Input> {
    let mut magic = [0u8; 4];
    let is_gsem = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_exact(&mut magic)
        .is_ok()
        && &magic == GSEM_MAGIC;
    if is_gsem {
        let g = load_gsem(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Input {
            csr: g.to_csr(PrecisionLevel::Full),
            gse: Some(g),
        })
    } else {
        let csr = read_matrix_market(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Input { csr, gse: None })
    }
}

enum Operator {
    Fp64,
    Half(HalfCsr),
    Gse(GseCsrMatrix),
}

impl Operator {
    fn build(input: &mut Input, format: Format, k: usize) -> Result<Self> {
        Ok(match format {
            Format::Fp64 => Operator::Fp64,
            Format::Fp16 => Operator::Half(HalfCsr::from_csr(&input.csr, HalfKind::Fp16)),
            Format::Bf16 => Operator::Half(HalfCsr::from_csr(&input.csr, HalfKind::Bf16)),
            _ => Operator::Gse(match input.gse.take() {
                Some(g) => g,
                None => convert_to_gse(&input.csr, k, None)?,
            }),
        })
    }

    fn as_dyn<'a>(&'a self, input: &'a Input) -> &'a dyn LinearOperator {
        match self {
            Operator::Fp64 => &input.csr,
            Operator::Half(h) => h,
            Operator::Gse(g) => g,
        }
    }
}

fn write_report(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_text(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// JSON has no infinity; non-finite numbers become strings.
fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<u8> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let k = cfg.pick(a.k, "k", DEFAULT_K)?;
    let emit = cfg.pick(a.common.emit, "emit", Emit::Json)?;
    let input = load_input(&a.matrix)?;
    let report = analyze_report(&input.csr, &DEFAULT_TOPK, k)?;
    let text = match emit {
        Emit::Csv => report.to_csv(),
        Emit::Json => json_text(&json!({
            "command": "analyze",
            "matrix": a.matrix.display().to_string(),
            "config": { "k": k },
            "report": report,
        }))?,
    };
    write_report(a.common.out.as_deref(), &text)?;
    Ok(0)
}

fn cmd_convert(a: ConvertArgs) -> Result<u8> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let k = cfg.pick(a.k, "k", DEFAULT_K)?;
    let m = read_matrix_market(&a.matrix).with_context(|| format!("reading {}", a.matrix.display()))?;
    let g = convert_to_gse(&m, k, None)?;
    save_gsem(&g, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let hist = exponent_histogram(&m);
    let table = g.table().entries();
    let exact: u64 = hist
        .counts
        .iter()
        .filter(|(&e, _)| table.contains(&(e + 1)))
        .map(|(_, &c)| c)
        .sum();
    let coverage = if m.nnz() == 0 { 1.0 } else { exact as f64 / m.nnz() as f64 };
    let seg = g.segments();
    let file_bytes = std::fs::metadata(&a.out)?.len();
    let summary = json!({
        "command": "convert",
        "matrix": a.matrix.display().to_string(),
        "output": a.out.display().to_string(),
        "config": { "k": k },
        "rows": g.rows(),
        "cols": g.cols(),
        "nnz": g.nnz(),
        "table": table,
        "table_coverage": coverage,
        "exponent_index_in_column": g.ei_in_column(),
        "bytes": {
            "head": seg.head().len() * 2,
            "tail1": seg.tail1().len() * 2,
            "tail2": seg.tail2().len() * 4,
            "row_ptr": g.row_ptr().len() * 8,
            "col_idx": g.col_idx_embedded().len() * 4,
            "exponent_index": g.side_exponent_indices().map_or(0, |s| s.len()),
            "file": file_bytes,
        },
    });
    write_report(None, &json_text(&summary)?)?;
    Ok(0)
}

fn cmd_spmv(a: SpmvArgs) -> Result<u8> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let format = cfg.pick(a.format, "format", Format::Fp64)?;
    let repeats = cfg.pick(a.repeats, "repeats", DEFAULT_REPEATS)?;
    let k = cfg.pick(a.k, "k", DEFAULT_K)?;
    let emit = cfg.pick(a.common.emit, "emit", Emit::Csv)?;
    if repeats == 0 {
        bail!("repeats must be at least 1");
    }

    let mut input = load_input(&a.matrix)?;
    let op = Operator::build(&mut input, format, k)?;
    let a_op = op.as_dyn(&input);
    let level = format.gse_level().unwrap_or(PrecisionLevel::Full);
    let exec = Execution::default();
    let x = vec![1.0; a_op.cols()];
    let mut reference = vec![0.0; a_op.rows()];
    input.csr.apply(&x, &mut reference, PrecisionLevel::Full, exec)?;
    let mut y = vec![0.0; a_op.rows()];
    a_op.apply(&x, &mut y, level, exec)?;
    let err = max_abs_error(&y, &reference)?.value;

    let timing = (!a.omit_timing).then(|| {
        time_repeats(repeats, || {
            a_op.apply(&x, &mut y, level, exec).expect("dimensions checked above");
        })
    });
    let level_name = match format.gse_level() {
        Some(PrecisionLevel::HeadOnly) => "head-only",
        Some(PrecisionLevel::HeadTail1) => "head-tail1",
        Some(PrecisionLevel::Full) => "full",
        None => "-",
    };
    let nnz = a_op.nnz();
    let matrix = a.matrix.display().to_string();
    let text = match emit {
        Emit::Csv => {
            let (median, gf) = match timing {
                Some(t) => (format!("{}", t.median_ns), format!("{}", gflops(nnz, t.median_ns * 1e-9))),
                None => (String::new(), String::new()),
            };
            format!(
                "matrix,format,nnz,level,repeats,median-ns,gflops,max_abs_err\n{matrix},{format},{nnz},{level_name},{repeats},{median},{gf},{err}\n"
            )
        }
        Emit::Json => json_text(&json!({
            "command": "spmv",
            "matrix": matrix,
            "config": { "format": format, "repeats": repeats, "k": k },
            "rows": a_op.rows(),
            "cols": a_op.cols(),
            "nnz": nnz,
            "level": level_name,
            "max_abs_err": json_f64(err),
            "timing": timing.map(|t| json!({
                "median_ns": t.median_ns,
                "mean_ns": t.mean_ns,
                "gflops": gflops(nnz, t.median_ns * 1e-9),
            })),
        }))?,
    };
    write_report(a.common.out.as_deref(), &text)?;
    Ok(0)
}

fn read_rhs(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().with_context(|| format!("bad right-hand side value '{t}'")))
        .collect()
}

fn cmd_solve(a: SolveArgs) -> Result<u8> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let kind = cfg.pick(a.solver, "solver", SolverKind::Cg)?;
    let stepped = a.stepped || cfg.get::<bool>("stepped")?.unwrap_or(false);
    let default_format = if stepped { Format::GseFull } else { Format::Fp64 };
    let format = cfg.pick(a.format, "format", default_format)?;
    let k = cfg.pick(a.k, "k", DEFAULT_K)?;
    let emit = cfg.pick(a.common.emit, "emit", Emit::Json)?;
    if stepped && format.gse_level().is_none() {
        bail!("--stepped needs a GSE format, got {format}");
    }

    let base = SolverConfig::for_kind(kind);
    let d = &base.monitor;
    let l = cfg.pick(a.l, "l", d.l)?;
    let t = cfg.pick(a.t, "t", d.t)?;
    let m = cfg.pick(a.m, "m", d.m)?;
    let mut monitor = if (l, t, m) == (d.l, d.t, d.m) {
        d.clone()
    } else {
        MonitorParams::scaled(kind, l, t, m)
    };
    monitor.rsd_limit = cfg.pick(a.rsd_limit, "rsd-limit", monitor.rsd_limit)?;
    monitor.n_dec_limit = cfg.pick(a.n_dec_limit, "n-dec-limit", monitor.n_dec_limit)?;
    monitor.rel_dec_limit = cfg.pick(a.rel_dec_limit, "rel-dec-limit", monitor.rel_dec_limit)?;
    let config = SolverConfig {
        tol: cfg.pick(a.tol, "tol", base.tol)?,
        max_iters: cfg.pick(a.max_iters, "max-iters", base.max_iters)?,
        restart: cfg.pick(a.restart, "restart", base.restart)?,
        monitor,
        precision: if stepped {
            PrecisionPolicy::Stepped
        } else {
            PrecisionPolicy::Fixed(format.gse_level().unwrap_or(PrecisionLevel::Full))
        },
        ..base
    };
    config.validate()?;

    let mut input = load_input(&a.matrix)?;
    let b = match &a.rhs {
        Some(p) => read_rhs(p)?,
        None => {
            let ones = vec![1.0; input.csr.cols()];
            let mut b = vec![0.0; input.csr.rows()];
            input.csr.apply(&ones, &mut b, PrecisionLevel::Full, config.exec)?;
            b
        }
    };
    let op = Operator::build(&mut input, format, k)?;
    let report = solve(op.as_dyn(&input), &b, &config)?;
    let code = report.status.exit_code() as u8;

    let matrix = a.matrix.display().to_string();
    let text = match emit {
        Emit::Json => {
            let mut r = serde_json::to_value(&report)?;
            if a.omit_timing {
                if let Some(obj) = r.as_object_mut() {
                    obj.remove("wall_time_s");
                }
            }
            json_text(&json!({
                "command": "solve",
                "matrix": matrix,
                "config": {
                    "format": format,
                    "stepped": stepped,
                    "k": k,
                    "rhs": a.rhs.as_ref().map(|p| p.display().to_string()),
                    "solver": config,
                },
                "report": r,
            }))?
        }
        Emit::Csv => {
            let wall = if a.omit_timing { String::new() } else { report.wall_time_s.to_string() };
            format!(
                "matrix,solver,format,stepped,tol,status,iterations,final_relative_residual,explicit_relative_residual,final_level,switches,wall_time_s\n\
                 {matrix},{kind},{format},{stepped},{},{},{},{},{},{},{},{wall}\n",
                config.tol,
                status_name(&report.status),
                report.iterations,
                report.final_relative_residual,
                report.explicit_relative_residual,
                report.final_level.as_u8(),
                report.switch_log.len(),
            )
        }
    };
    write_report(a.common.out.as_deref(), &text)?;
    Ok(code)
}

fn status_name(s: &gsesem::solvers::SolveStatus) -> &'static str {
    use gsesem::solvers::SolveStatus::*;
    match s {
        Converged => "converged",
        MaxIterations => "max-iterations",
        Breakdown { .. } => "breakdown",
        NumericalAbort { .. } => "numerical-abort",
    }
}

/// Caps the worker pool from `GSE_THREADS`.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("GSE_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    init_threads()?;
    match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Spmv(a) => cmd_spmv(a),
        Command::Solve(a) => cmd_solve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
