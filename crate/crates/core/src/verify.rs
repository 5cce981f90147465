//! Randomized equivalence checks: skewed and align-first columns against the
//! baseline column, and the baseline against the exact oracle whenever the
//! chain lost no bits.
//!
//! Every trial draws its operands from its own ChaCha stream derived from the
//! seed, the depth and the trial index, so results do not depend on thread
//! count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datapath::{fold_column, Diagnostics, Mode};
use crate::fp::{decode, round_to_format, FpFormat, UnpackedFloat};
use crate::reference::{exact_dot, round_exact};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperandDist {
    /// Any normal code, uniformly.
    Normal,
    /// Normal codes whose unbiased exponent lies in `[-spread, spread]`;
    /// mixes heavy cancellation in with carries.
    Clustered { spread: i32 },
}

/// Draw one normal code of `fmt`.
pub fn random_normal(rng: &mut impl Rng, fmt: FpFormat, dist: OperandDist) -> u32 {
    loop {
        let code = match dist {
            OperandDist::Normal => rng.random_range(0..1u64 << fmt.width()) as u32,
            OperandDist::Clustered { spread } => {
                let e = rng.random_range(-spread..=spread) + fmt.bias;
                if e < 1 {
                    continue;
                }
                let frac = rng.random_range(0..1u32 << fmt.frac_bits);
                let sign = u32::from(rng.random_bool(0.5)) << (fmt.width() - 1);
                sign | (e as u32) << fmt.frac_bits | frac
            }
        };
        if fmt.is_normal_code(code) {
            return code;
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub depths: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
    pub input_fmt: FpFormat,
    pub accum_fmt: FpFormat,
    pub dist: OperandDist,
    /// Probability that an operand is replaced by +0.
    pub zero_prob: f64,
    pub check_oracle: bool,
    /// Flip the LSB of every skewed result. Test hook for the mismatch path.
    pub inject_fault: bool,
}

impl VerifyConfig {
    pub fn new(depths: Vec<usize>, trials: u64, seed: u64) -> Self {
        VerifyConfig {
            depths,
            trials,
            seed,
            input_fmt: FpFormat::BF16,
            accum_fmt: FpFormat::FP32,
            dist: OperandDist::Normal,
            zero_prob: 0.0,
            check_oracle: true,
            inject_fault: false,
        }
    }
}

/// A failing trial, with enough to replay it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub depth: usize,
    pub trial: u64,
    pub activations: Vec<u32>,
    pub weights: Vec<u32>,
    pub baseline: u32,
    pub skewed: u32,
    pub align_first: u32,
    pub oracle: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepthStats {
    pub depth: usize,
    pub trials: u64,
    /// Trials with at least one mismatch.
    pub failed_trials: u64,
    pub skewed_mismatches: u64,
    pub align_first_mismatches: u64,
    /// Trials whose baseline chain was lossless and therefore compared to the oracle.
    pub oracle_checked: u64,
    pub oracle_mismatches: u64,
    /// Summed over all baseline runs.
    pub baseline_diag: Diagnostics,
    pub first_mismatch: Option<Mismatch>,
}

impl DepthStats {
    pub fn mismatches(&self) -> u64 {
        self.skewed_mismatches + self.align_first_mismatches + self.oracle_mismatches
    }

    fn merge(mut self, other: DepthStats) -> DepthStats {
        self.trials += other.trials;
        self.failed_trials += other.failed_trials;
        self.skewed_mismatches += other.skewed_mismatches;
        self.align_first_mismatches += other.align_first_mismatches;
        self.oracle_checked += other.oracle_checked;
        self.oracle_mismatches += other.oracle_mismatches;
        self.baseline_diag.merge(&other.baseline_diag);
        self.first_mismatch = match (self.first_mismatch, other.first_mismatch) {
            (Some(a), Some(b)) => Some(if a.trial <= b.trial { a } else { b }),
            (a, b) => a.or(b),
        };
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub per_depth: Vec<DepthStats>,
}

impl VerifyReport {
    pub fn trials(&self) -> u64 {
        self.per_depth.iter().map(|d| d.trials).sum()
    }

    pub fn mismatches(&self) -> u64 {
        self.per_depth.iter().map(DepthStats::mismatches).sum()
    }

    pub fn failed_trials(&self) -> u64 {
        self.per_depth.iter().map(|d| d.failed_trials).sum()
    }

    pub fn oracle_checked(&self) -> u64 {
        self.per_depth.iter().map(|d| d.oracle_checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.mismatches() == 0
    }
}

fn trial_rng(seed: u64, depth: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((depth as u64) << 40 | trial);
    rng
}

fn operands(cfg: &VerifyConfig, depth: usize, trial: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = trial_rng(cfg.seed, depth, trial);
    let draw = |rng: &mut ChaCha8Rng| {
        if cfg.zero_prob > 0.0 && rng.random_bool(cfg.zero_prob) {
            0
        } else {
            random_normal(rng, cfg.input_fmt, cfg.dist)
        }
    };
    let a = (0..depth).map(|_| draw(&mut rng)).collect();
    let w = (0..depth).map(|_| draw(&mut rng)).collect();
    (a, w)
}

/// Outcome of one column under each datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnResult {
    pub baseline: u32,
    pub skewed: u32,
    pub align_first: u32,
    pub baseline_diag: Diagnostics,
    pub oracle: Option<u32>,
}

/// Run one column through every datapath; `oracle` is filled in when
/// requested and the baseline chain (including its final normalization)
/// dropped no bits.
pub fn check_column(activations: &[u32], weights: &[u32], cfg: &VerifyConfig) -> ColumnResult {
    let dec = |b: &u32| -> UnpackedFloat { decode(*b, cfg.input_fmt).expect("generated codes are normal") };
    let pairs: Vec<_> = activations.iter().map(dec).zip(weights.iter().map(dec)).collect();
    let run = |mode, diag: &mut Diagnostics| {
        let r = round_to_format(&fold_column(mode, &pairs, cfg.input_fmt, diag), cfg.accum_fmt);
        diag.sticky_collapses += u64::from(r.sticky);
        diag.saturations += u64::from(r.saturated);
        diag.flushes += u64::from(r.flushed);
        r.bits
    };
    let mut baseline_diag = Diagnostics::default();
    let baseline = run(Mode::Baseline, &mut baseline_diag);
    let mut skewed = run(Mode::Skewed, &mut Diagnostics::default());
    if cfg.inject_fault {
        skewed ^= 1;
    }
    let align_first = run(Mode::AlignFirst, &mut Diagnostics::default());
    let lossless = baseline_diag.sticky_collapses == 0 && baseline_diag.alignment_overflows == 0;
    let oracle = (cfg.check_oracle && lossless).then(|| round_exact(&exact_dot(&pairs, cfg.input_fmt), cfg.accum_fmt));
    ColumnResult { baseline, skewed, align_first, baseline_diag, oracle }
}

fn run_trial(cfg: &VerifyConfig, depth: usize, trial: u64) -> DepthStats {
    let (a, w) = operands(cfg, depth, trial);
    let r = check_column(&a, &w, cfg);
    let skewed_bad = r.skewed != r.baseline;
    let align_bad = r.align_first != r.baseline;
    let oracle_bad = r.oracle.is_some_and(|o| o != r.baseline);
    let first_mismatch = (skewed_bad || align_bad || oracle_bad).then_some(Mismatch {
        depth,
        trial,
        activations: a,
        weights: w,
        baseline: r.baseline,
        skewed: r.skewed,
        align_first: r.align_first,
        oracle: r.oracle,
    });
    DepthStats {
        depth,
        trials: 1,
        failed_trials: u64::from(first_mismatch.is_some()),
        skewed_mismatches: u64::from(skewed_bad),
        align_first_mismatches: u64::from(align_bad),
        oracle_checked: u64::from(r.oracle.is_some()),
        oracle_mismatches: u64::from(oracle_bad),
        baseline_diag: r.baseline_diag,
        first_mismatch,
    }
}

pub fn run_verify(cfg: &VerifyConfig) -> VerifyReport {
    let per_depth = cfg
        .depths
        .iter()
        .map(|&depth| {
            let empty = || DepthStats { depth, ..Default::default() };
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, depth, t))
                .reduce(empty, DepthStats::merge)
        })
        .collect();
    VerifyReport { per_depth }
}
