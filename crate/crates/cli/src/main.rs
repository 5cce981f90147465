use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sysfp_core::engine::{simulate, ArrayConfig, SimResult};
use sysfp_core::io::{load_matrix, write_matrix_text, write_trace};
use sysfp_core::matrix::Matrix;
use sysfp_core::report::run_network;
use sysfp_core::verify::{run_verify, OperandDist, VerifyConfig};
use sysfp_core::workloads::{read_layers, Network};
use sysfp_core::{CostParams, FpFormat, Mode};

/// Systolic-array FMA pipeline simulator.
#[derive(Parser)]
#[command(name = "sysfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiply two matrix files on the array.
    Simulate(SimulateArgs),
    /// Randomized equivalence check of the pipelines.
    Verify(VerifyArgs),
    /// Per-layer latency and energy for a CNN.
    Network(NetworkArgs),
    /// Print the pipeline event log of a small run.
    Trace(TraceArgs),
}

#[derive(Args)]
struct Shared {
    #[arg(long, env = "SYSFP_MODE", default_value = "skewed")]
    mode: Mode,
    #[arg(long, env = "SYSFP_ROWS")]
    rows: Option<usize>,
    #[arg(long, env = "SYSFP_COLS")]
    cols: Option<usize>,
    /// Input format: bf16, fp8-e4m3 or fp8-e5m2.
    #[arg(long, env = "SYSFP_FMT", default_value = "bf16")]
    fmt: FpFormat,
    #[arg(long, env = "SYSFP_SEED", default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when absent).
    #[arg(long, env = "SYSFP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Activations, M x K.
    #[arg(long, env = "SYSFP_A")]
    a: PathBuf,
    /// Weights, K x N.
    #[arg(long, env = "SYSFP_W")]
    w: PathBuf,
    /// Accumulation (output) format.
    #[arg(long, env = "SYSFP_ACCUM_FMT", default_value = "fp32")]
    accum_fmt: FpFormat,
    /// Cycle summary file (stderr when absent).
    #[arg(long, env = "SYSFP_SUMMARY")]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Normal,
    Clustered,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    shared: Shared,
    /// Trials per column depth.
    #[arg(long, env = "SYSFP_TRIALS", default_value_t = 10_000)]
    trials: u64,
    #[arg(long, env = "SYSFP_DIST", value_enum, default_value = "normal")]
    dist: Dist,
    /// Exponent spread for the clustered distribution.
    #[arg(long, env = "SYSFP_SPREAD", default_value_t = 6)]
    spread: i32,
    #[arg(long, hide = true, env = "SYSFP_INJECT_FAULT")]
    inject_fault: bool,
}

#[derive(Args)]
struct NetworkArgs {
    #[command(flatten)]
    shared: Shared,
    /// mobilenet, resnet50 or a layer table CSV.
    #[arg(long, env = "SYSFP_NET")]
    net: String,
    /// `key = value` cost parameter file.
    #[arg(long, env = "SYSFP_COST")]
    cost: Option<PathBuf>,
    #[arg(long, env = "SYSFP_CLOCK_PERIOD_NS")]
    clock_period_ns: Option<f64>,
    #[arg(long, env = "SYSFP_POWER_FACTOR")]
    power_factor: Option<f64>,
    #[arg(long, env = "SYSFP_AREA_FACTOR")]
    area_factor: Option<f64>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    shared: Shared,
    /// Number of activation vectors to stream.
    #[arg(long, env = "SYSFP_VECTORS", default_value_t = 1)]
    vectors: usize,
}

enum Outcome {
    Ok,
    Mismatch,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_summary(mut w: impl Write, mode: Mode, r: &SimResult) -> io::Result<()> {
    writeln!(w, "mode,preload,fill,stream,drain,total")?;
    let p = &r.phases;
    writeln!(w, "{mode},{},{},{},{},{}", p.preload, p.fill, p.stream, p.drain, r.total_cycles)?;
    let d = &r.diagnostics;
    writeln!(
        w,
        "# sticky_collapses={} alignment_overflows={} saturations={} flushes={}",
        d.sticky_collapses, d.alignment_overflows, d.saturations, d.flushes
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let s = &args.shared;
    let a = load_matrix(&args.a, s.fmt).with_context(|| format!("reading {}", args.a.display()))?;
    let w = load_matrix(&args.w, s.fmt).with_context(|| format!("reading {}", args.w.display()))?;
    let rows = s.rows.unwrap_or(w.rows());
    let cols = s.cols.unwrap_or(w.cols());
    let cfg = ArrayConfig::new(rows, cols, s.mode).with_formats(s.fmt, args.accum_fmt);
    let (result, _) = simulate(cfg, &a, &w, false)?;
    let mut out = output(s.out.as_deref())?;
    write_matrix_text(&mut out, &result.outputs, args.accum_fmt)?;
    out.flush()?;
    match &args.summary {
        Some(p) => write_summary(File::create(p).with_context(|| format!("creating {}", p.display()))?, s.mode, &result)?,
        None => write_summary(io::stderr().lock(), s.mode, &result)?,
    }
    Ok(Outcome::Ok)
}

fn cmd_verify(args: &VerifyArgs) -> Result<Outcome> {
    let s = &args.shared;
    let rows = s.rows.unwrap_or(8);
    if rows == 0 {
        bail!("--rows must be at least 1");
    }
    if args.trials == 0 {
        eprintln!("warning: --trials 0, nothing was checked");
    }
    let mut cfg = VerifyConfig::new((1..=rows).collect(), args.trials, s.seed);
    cfg.input_fmt = s.fmt;
    cfg.dist = match args.dist {
        Dist::Normal => OperandDist::Normal,
        Dist::Clustered => OperandDist::Clustered { spread: args.spread },
    };
    cfg.inject_fault = args.inject_fault;
    let report = run_verify(&cfg);

    let mut out = output(s.out.as_deref())?;
    writeln!(out, "depth,trials,skewed_mismatches,align_first_mismatches,oracle_checked,oracle_mismatches,sticky_collapses,alignment_overflows")?;
    for d in &report.per_depth {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.depth,
            d.trials,
            d.skewed_mismatches,
            d.align_first_mismatches,
            d.oracle_checked,
            d.oracle_mismatches,
            d.baseline_diag.sticky_collapses,
            d.baseline_diag.alignment_overflows
        )?;
    }
    out.flush()?;
    let failed = report.failed_trials();
    eprintln!(
        "{} trials, {} compared with the exact oracle: {} passed, {} failed",
        report.trials(),
        report.oracle_checked(),
        report.trials() - failed,
        failed
    );
    if let Some(m) = report.per_depth.iter().find_map(|d| d.first_mismatch.as_ref()) {
        let hex = |v: &[u32]| v.iter().map(|x| format!("{x:x}")).collect::<Vec<_>>().join(" ");
        eprintln!(
            "first mismatch: depth {} trial {}: baseline {:08x} skewed {:08x} align-first {:08x} oracle {}",
            m.depth,
            m.trial,
            m.baseline,
            m.skewed,
            m.align_first,
            m.oracle.map_or("-".to_string(), |o| format!("{o:08x}"))
        );
        eprintln!("  activations: {}\n  weights: {}", hex(&m.activations), hex(&m.weights));
        return Ok(Outcome::Mismatch);
    }
    Ok(Outcome::Ok)
}

fn cmd_network(args: &NetworkArgs) -> Result<Outcome> {
    let s = &args.shared;
    let layers = match args.net.parse::<Network>() {
        Ok(net) => net.layers(),
        Err(_) => {
            let f = File::open(&args.net).with_context(|| format!("`{}` is not a known network or a readable file", args.net))?;
            read_layers(f).with_context(|| format!("reading {}", args.net))?
        }
    };
    let mut cost = match &args.cost {
        Some(p) => CostParams::load(p)?,
        None => CostParams::default(),
    };
    if let Some(v) = args.clock_period_ns {
        cost.clock_period_ns = v;
    }
    if let Some(v) = args.power_factor {
        cost.skewed_power_factor = v;
    }
    if let Some(v) = args.area_factor {
        cost.skewed_area_factor = v;
    }
    cost.validate()?;
    let (rows, cols) = (s.rows.unwrap_or(128), s.cols.unwrap_or(128));
    if rows == 0 || cols == 0 {
        bail!("array must be at least 1x1");
    }
    let report = run_network(&layers, rows, cols, &cost)?;
    let mut out = output(s.out.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    eprintln!(
        "latency reduction {:.2}%, energy reduction {:.2}%, area factor {}",
        report.total.latency_reduction_pct(),
        report.total.energy_reduction_pct(),
        cost.skewed_area_factor
    );
    Ok(Outcome::Ok)
}

fn cmd_trace(args: &TraceArgs) -> Result<Outcome> {
    let s = &args.shared;
    let (rows, cols) = (s.rows.unwrap_or(2), s.cols.unwrap_or(1));
    if args.vectors == 0 {
        bail!("--vectors must be at least 1");
    }
    let one = match s.fmt.width() {
        16 => 0x3F80,
        8 => (s.fmt.bias as u32) << s.fmt.frac_bits,
        _ => bail!("trace needs a 16- or 8-bit input format"),
    };
    let a = Matrix::filled(args.vectors, rows, one);
    let w = Matrix::filled(rows, cols, one);
    let cfg = ArrayConfig::new(rows, cols, s.mode).with_formats(s.fmt, FpFormat::FP32);
    let (_, events) = simulate(cfg, &a, &w, true)?;
    let mut out = output(s.out.as_deref())?;
    write_trace(&mut out, &events)?;
    out.flush()?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Network(a) => cmd_network(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Mismatch) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
