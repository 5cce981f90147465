//! Cycle-accurate weight-stationary array.
//!
//! Weights are preloaded one row per cycle. Activations enter at the West edge
//! and move one PE East per cycle; partial sums move South through the PE
//! chain of each column and are rounded once at the South edge. Every PE holds
//! real pipeline registers that are updated on each simulated cycle, so the
//! reported cycle counts are measured, not computed. [`tile_cycles`] gives the
//! closed form they are checked against.
//!
//! Row `r` of a column sees the chain `hop * r` cycles after row 0, where the
//! hop is two cycles for the baseline and align-first pipelines (a PE cannot
//! start before its predecessor has normalized) and one cycle for the skewed
//! pipeline (stage 1 of PE `r` overlaps stage 2 of PE `r-1`). The West edge
//! feeds row `r` with the same `hop * r` skew so activations meet their chain.

use thiserror::Error;

use crate::datapath::{align_first, baseline, skewed, ChainValue, Diagnostics, Mode};
use crate::fp::{decode, round_to_format, FpError, FpFormat, UnpackedFloat, ACC_FRAC_POINT};
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid array configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no weights preloaded")]
    NotPreloaded,
    #[error("event tracing was not enabled for this array")]
    TracingDisabled,
    #[error(transparent)]
    Fp(#[from] FpError),
    #[error("pipeline schedule violated at cycle {cycle}, PE ({row}, {col}): {what}")]
    ScheduleViolation { cycle: u64, row: usize, col: usize, what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub mode: Mode,
    pub input_fmt: FpFormat,
    pub accum_fmt: FpFormat,
}

impl ArrayConfig {
    /// BF16 inputs, FP32 outputs.
    pub fn new(rows: usize, cols: usize, mode: Mode) -> Self {
        ArrayConfig { rows, cols, mode, input_fmt: FpFormat::BF16, accum_fmt: FpFormat::FP32 }
    }

    pub fn with_formats(mut self, input_fmt: FpFormat, accum_fmt: FpFormat) -> Self {
        self.input_fmt = input_fmt;
        self.accum_fmt = accum_fmt;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("array must be at least 1x1, got {}x{}", self.rows, self.cols));
        }
        let (pi, pa) = (self.input_fmt.precision(), self.accum_fmt.precision());
        if pa < 2 * pi {
            return bad(format!(
                "accumulation format {} ({pa} bits) is narrower than an exact {}-bit product",
                self.accum_fmt,
                2 * pi
            ));
        }
        if 2 * self.input_fmt.frac_bits > ACC_FRAC_POINT {
            return bad(format!("products of {} do not fit the accumulator", self.input_fmt));
        }
        if pa + 2 > ACC_FRAC_POINT + 1 {
            return bad(format!("accumulator has no guard bits for {}", self.accum_fmt));
        }
        Ok(())
    }
}

/// Cycles between a chain leaving PE `r` and entering PE `r + 1`.
pub fn hop_cycles(mode: Mode) -> u64 {
    match mode {
        Mode::Baseline | Mode::AlignFirst => 2,
        Mode::Skewed => 1,
    }
}

/// Cycles from a vector's first stage-1 operation at row 0 to its rounded
/// output at the South edge, inclusive.
pub fn drain_cycles(rows: usize, mode: Mode) -> u64 {
    // last PE's stage 2 ends at hop*(R-1) + 1; rounding takes one more cycle
    hop_cycles(mode) * (rows as u64 - 1) + 3
}

/// Total cycles for one tile: preload, column fill, streaming and drain.
pub fn tile_cycles(rows: usize, active_cols: usize, vectors: usize, mode: Mode) -> u64 {
    let preload = rows as u64;
    if vectors == 0 || active_cols == 0 {
        return preload;
    }
    preload + (active_cols as u64 - 1) + (vectors as u64 - 1) + drain_cycles(rows, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Stage1,
    Stage2,
    Round,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Round => "round",
        }
    }
}

/// One pipeline operation. `Round` events use `row == rows` (the South edge).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineEvent {
    pub cycle: u64,
    pub row: usize,
    pub col: usize,
    pub stage: Stage,
    pub mode: Mode,
    pub vector: usize,
}

/// Measured cycle breakdown of a tile; the fields sum to the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseCycles {
    pub preload: u64,
    /// Extra cycles before the last active column starts.
    pub fill: u64,
    /// Cycles between the first and last vector entering.
    pub stream: u64,
    /// From the last vector entering the last column to its rounded output.
    pub drain: u64,
}

impl PhaseCycles {
    pub fn total(&self) -> u64 {
        self.preload + self.fill + self.stream + self.drain
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// `M x N` output codes in the accumulation format.
    pub outputs: Matrix<u32>,
    /// The same outputs before rounding, as they left the last row.
    pub sums: Matrix<ChainValue>,
    pub total_cycles: u64,
    pub phases: PhaseCycles,
    /// Measured latency of one vector through one column (see [`drain_cycles`]).
    pub vector_latency: u64,
    /// Datapath and rounding events together.
    pub diagnostics: Diagnostics,
    /// The South-edge rounding's share of `diagnostics`.
    pub rounding: Diagnostics,
}

#[derive(Debug, Clone, Copy)]
enum S1 {
    Base(baseline::Stage1),
    Align(align_first::Stage1),
    Skew(skewed::Stage1Out),
}

#[derive(Debug, Clone, Copy)]
struct Tagged<T> {
    vector: usize,
    value: T,
}

pub struct SystolicArray {
    cfg: ArrayConfig,
    /// `rows x active_cols`, zero-padded below the preloaded `K` rows.
    weights: Option<Matrix<UnpackedFloat>>,
    active_rows: usize,
    tracing: bool,
    log: Vec<PipelineEvent>,
}

impl SystolicArray {
    pub fn new(cfg: ArrayConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(SystolicArray { cfg, weights: None, active_rows: 0, tracing: false, log: Vec::new() })
    }

    pub fn with_tracing(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.cfg
    }

    /// Load a `K x N` block of weight codes (`K <= rows`, `N <= cols`).
    /// Returns the cycles spent.
    pub fn preload_weights(&mut self, w: &Matrix<u32>) -> Result<u64, EngineError> {
        let (k, n) = (w.rows(), w.cols());
        if k == 0 || n == 0 || k > self.cfg.rows || n > self.cfg.cols {
            return Err(EngineError::DimensionMismatch(format!(
                "weights are {k}x{n}, array is {}x{}",
                self.cfg.rows, self.cfg.cols
            )));
        }
        let fmt = self.cfg.input_fmt;
        let mut decoded = Matrix::filled(self.cfg.rows, n, UnpackedFloat::zero(crate::fp::Sign::Pos));
        for r in 0..k {
            for c in 0..n {
                decoded.set(r, c, decode(*w.get(r, c), fmt)?);
            }
        }
        self.weights = Some(decoded);
        self.active_rows = k;
        Ok(self.cfg.rows as u64)
    }

    /// Decoded weight held by PE `(row, col)`, if that PE is in use.
    pub fn resident_weight(&self, row: usize, col: usize) -> Option<UnpackedFloat> {
        let w = self.weights.as_ref()?;
        (row < w.rows() && col < w.cols()).then(|| *w.get(row, col))
    }

    /// Events of the last [`run_tile`](Self::run_tile), in simulation order.
    pub fn event_log(&self) -> Result<&[PipelineEvent], EngineError> {
        if !self.tracing {
            return Err(EngineError::TracingDisabled);
        }
        Ok(&self.log)
    }

    /// Stream `M x K` activation codes through the preloaded weights.
    pub fn run_tile(&mut self, a: &Matrix<u32>) -> Result<SimResult, EngineError> {
        self.run_tile_accumulate(a, None)
    }

    /// Like [`run_tile`](Self::run_tile), with `M x N` partial sums entering
    /// the top of each column instead of zero. Partials must come from a
    /// previous run in the same mode.
    pub fn run_tile_accumulate(
        &mut self,
        a: &Matrix<u32>,
        north: Option<&Matrix<ChainValue>>,
    ) -> Result<SimResult, EngineError> {
        let weights = self.weights.as_ref().ok_or(EngineError::NotPreloaded)?;
        if a.cols() != self.active_rows {
            return Err(EngineError::DimensionMismatch(format!(
                "activations have {} columns, preloaded weights have {} rows",
                a.cols(),
                self.active_rows
            )));
        }
        let cfg = self.cfg;
        let (rows, n, m) = (cfg.rows, weights.cols(), a.rows());
        if let Some(p) = north {
            if p.rows() != m || p.cols() != n {
                return Err(EngineError::DimensionMismatch(format!(
                    "partial sums are {}x{}, tile produces {m}x{n}",
                    p.rows(),
                    p.cols()
                )));
            }
        }
        let north_of = |v: usize, c: usize| north.map_or(ChainValue::ZERO, |p| *p.get(v, c));
        let hop = hop_cycles(cfg.mode);
        let zero = UnpackedFloat::zero(crate::fp::Sign::Pos);
        let mut acts = Matrix::filled(m, rows, zero);
        for v in 0..m {
            for k in 0..a.cols() {
                acts.set(v, k, decode(*a.get(v, k), cfg.input_fmt)?);
            }
        }

        self.log.clear();
        let tracing = self.tracing;
        let mut log = std::mem::take(&mut self.log);
        let mut event = |cycle, row, col, stage, vector| {
            if tracing {
                log.push(PipelineEvent { cycle, row, col, stage, mode: cfg.mode, vector });
            }
        };

        let t0 = rows as u64;
        let mut diag = Diagnostics::default();
        let mut rounding = Diagnostics::default();
        let mut outputs = Matrix::filled(m, n, 0u32);
        let mut sums = Matrix::filled(m, n, ChainValue::ZERO);
        let mut remaining = m * n;
        let mut first_s1_last_col = None;
        let mut last_s1_last_col = None;
        let mut first_s1_col0 = None;
        let mut first_round_col0 = None;
        let mut last_round = t0.saturating_sub(1);

        // pipeline registers, indexed [row * n + col]
        let cells = rows * n;
        let mut act: Vec<Option<Tagged<UnpackedFloat>>> = vec![None; cells];
        let mut s1: Vec<Option<Tagged<S1>>> = vec![None; cells];
        let mut out: Vec<Option<Tagged<ChainValue>>> = vec![None; cells];
        let mut e_hat_wire: Vec<Option<Tagged<i32>>> = vec![None; cells];

        let mut t = t0;
        while remaining > 0 {
            // activation latches: shift East, feed the West edge
            for r in 0..rows {
                for c in (1..n).rev() {
                    act[r * n + c] = act[r * n + c - 1];
                }
                let lead = t0 + hop * r as u64;
                act[r * n] = (t >= lead && t - lead < m as u64).then(|| {
                    let v = (t - lead) as usize;
                    Tagged { vector: v, value: *acts.get(v, r) }
                });
            }

            // South edge: round what the last row registered last cycle
            for c in 0..n {
                if let Some(o) = out[(rows - 1) * n + c] {
                    let r = round_to_format(&o.value, cfg.accum_fmt);
                    rounding.saturations += u64::from(r.saturated);
                    rounding.flushes += u64::from(r.flushed);
                    rounding.sticky_collapses += u64::from(r.sticky);
                    outputs.set(o.vector, c, r.bits);
                    sums.set(o.vector, c, o.value);
                    remaining -= 1;
                    last_round = t;
                    if c == 0 && o.vector == 0 {
                        first_round_col0 = Some(t);
                    }
                    event(t, rows, c, Stage::Round, o.vector);
                }
            }

            // stage 2 reads last cycle's stage-1 registers (and, when skewed,
            // the predecessor's output register)
            let mut new_out: Vec<Option<Tagged<ChainValue>>> = vec![None; cells];
            e_hat_wire.iter_mut().for_each(|w| *w = None);
            for r in 0..rows {
                for c in 0..n {
                    let i = r * n + c;
                    let Some(reg) = s1[i] else { continue };
                    let value = match reg.value {
                        S1::Base(s) => baseline::stage2(&s, &mut diag),
                        S1::Align(s) => align_first::stage2(&s, &mut diag),
                        S1::Skew(s) => {
                            let addend = if r == 0 {
                                north_of(reg.vector, c)
                            } else {
                                take_chain(&out, i - n, reg.vector, t, r, c)?
                            };
                            let s2 = skewed::stage2(&s, &addend, &mut diag);
                            e_hat_wire[i] = Some(Tagged { vector: reg.vector, value: s2.fix.forwarded_exponent() });
                            s2.value
                        }
                    };
                    new_out[i] = Some(Tagged { vector: reg.vector, value });
                    event(t, r, c, Stage::Stage2, reg.vector);
                }
            }

            // stage 1 on this cycle's activation latches
            let mut new_s1: Vec<Option<Tagged<S1>>> = vec![None; cells];
            for r in 0..rows {
                for c in 0..n {
                    let i = r * n + c;
                    let Some(x) = act[i] else { continue };
                    let w = weights.get(r, c);
                    let v = x.vector;
                    let reg = match cfg.mode {
                        Mode::Skewed => {
                            let e_hat = if r == 0 {
                                north_of(v, c).forwarded_exponent()
                            } else {
                                match e_hat_wire[i - n] {
                                    Some(e) if e.vector == v => e.value,
                                    _ => return Err(violation(t, r, c, "exponent wire not driven")),
                                }
                            };
                            S1::Skew(skewed::stage1(&x.value, w, e_hat, cfg.input_fmt))
                        }
                        Mode::Baseline | Mode::AlignFirst => {
                            let addend =
                                if r == 0 { north_of(v, c) } else { take_chain(&out, i - n, v, t, r, c)? };
                            if cfg.mode == Mode::Baseline {
                                S1::Base(baseline::stage1(&x.value, w, &addend, cfg.input_fmt))
                            } else {
                                S1::Align(align_first::stage1(&x.value, w, &addend, cfg.input_fmt, &mut diag))
                            }
                        }
                    };
                    new_s1[i] = Some(Tagged { vector: v, value: reg });
                    if r == 0 {
                        if c == n - 1 {
                            first_s1_last_col.get_or_insert(t);
                            last_s1_last_col = Some(t);
                        }
                        if c == 0 && v == 0 {
                            first_s1_col0 = Some(t);
                        }
                    }
                    event(t, r, c, Stage::Stage1, v);
                }
            }

            out = new_out;
            s1 = new_s1;
            t += 1;
            if t > t0 + tile_cycles(rows, n, m, cfg.mode) * 2 + 16 {
                return Err(violation(t, 0, 0, "tile did not drain"));
            }
        }
        self.log = log;

        let total_cycles = last_round + 1;
        let phases = match (first_s1_last_col, last_s1_last_col) {
            (Some(f), Some(l)) => PhaseCycles { preload: t0, fill: f - t0, stream: l - f, drain: total_cycles - l },
            _ => PhaseCycles { preload: t0, ..Default::default() },
        };
        let vector_latency = match (first_s1_col0, first_round_col0) {
            (Some(s), Some(r)) => r - s + 1,
            _ => 0,
        };
        diag.merge(&rounding);
        Ok(SimResult { outputs, sums, total_cycles, phases, vector_latency, diagnostics: diag, rounding })
    }
}

fn violation(cycle: u64, row: usize, col: usize, what: &'static str) -> EngineError {
    EngineError::ScheduleViolation { cycle, row, col, what }
}

fn take_chain(
    out: &[Option<Tagged<ChainValue>>],
    i: usize,
    vector: usize,
    t: u64,
    r: usize,
    c: usize,
) -> Result<ChainValue, EngineError> {
    match out[i] {
        Some(o) if o.vector == vector => Ok(o.value),
        Some(_) => Err(violation(t, r, c, "partial sum belongs to another vector")),
        None => Err(violation(t, r, c, "partial sum not ready")),
    }
}

/// Preload `w`, run `a` through it and return the result with the event log
/// (empty unless `trace`).
pub fn simulate(
    cfg: ArrayConfig,
    a: &Matrix<u32>,
    w: &Matrix<u32>,
    trace: bool,
) -> Result<(SimResult, Vec<PipelineEvent>), EngineError> {
    let mut array = SystolicArray::new(cfg)?.with_tracing(trace);
    array.preload_weights(w)?;
    let result = array.run_tile(a)?;
    let events = if trace { array.event_log()?.to_vec() } else { Vec::new() };
    Ok((result, events))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemmResult {
    pub outputs: Matrix<u32>,
    pub total_cycles: u64,
    pub tiles: u64,
    pub diagnostics: Diagnostics,
}

/// Full `M x K` by `K x N` product on the array. K-tiles run in order and pass
/// their unrounded sums North into the next; each output is rounded once.
pub fn run_gemm(cfg: ArrayConfig, a: &Matrix<u32>, w: &Matrix<u32>) -> Result<GemmResult, EngineError> {
    if a.cols() != w.rows() || w.rows() == 0 || w.cols() == 0 {
        return Err(EngineError::DimensionMismatch(format!(
            "{}x{} by {}x{}",
            a.rows(),
            a.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let mut array = SystolicArray::new(cfg)?;
    let (m, k, n) = (a.rows(), a.cols(), w.cols());
    let mut outputs = Matrix::filled(m, n, 0u32);
    let mut diag = Diagnostics::default();
    let (mut total_cycles, mut tiles) = (0, 0);
    for n0 in (0..n).step_by(cfg.cols) {
        let nc = cfg.cols.min(n - n0);
        let mut partial: Option<Matrix<ChainValue>> = None;
        for k0 in (0..k).step_by(cfg.rows) {
            let kc = cfg.rows.min(k - k0);
            array.preload_weights(&Matrix::from_fn(kc, nc, |r, c| *w.get(k0 + r, n0 + c)))?;
            let r = array.run_tile_accumulate(&Matrix::from_fn(m, kc, |v, c| *a.get(v, k0 + c)), partial.as_ref())?;
            total_cycles += r.total_cycles;
            tiles += 1;
            // only the last K-tile's rounding is kept
            if k0 + kc >= k {
                diag.merge(&r.diagnostics);
                for v in 0..m {
                    for c in 0..nc {
                        outputs.set(v, n0 + c, *r.outputs.get(v, c));
                    }
                }
            } else {
                let d = &r.diagnostics;
                let q = &r.rounding;
                diag.merge(&Diagnostics {
                    sticky_collapses: d.sticky_collapses - q.sticky_collapses,
                    alignment_overflows: d.alignment_overflows - q.alignment_overflows,
                    saturations: d.saturations - q.saturations,
                    flushes: d.flushes - q.flushes,
                });
            }
            partial = Some(r.sums);
        }
    }
    Ok(GemmResult { outputs, total_cycles, tiles, diagnostics: diag })
}
