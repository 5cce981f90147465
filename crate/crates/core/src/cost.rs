//! Relative latency, power and energy.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::datapath::Mode;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub clock_period_ns: f64,
    pub baseline_power: f64,
    pub skewed_power_factor: f64,
    /// Reported only; does not enter energy.
    pub skewed_area_factor: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { clock_period_ns: 1.0, baseline_power: 1.0, skewed_power_factor: 1.07, skewed_area_factor: 1.09 }
    }
}

const KEYS: [&str; 4] = ["clock_period_ns", "baseline_power", "skewed_power_factor", "skewed_area_factor"];

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, value) in KEYS.iter().zip(self.fields()) {
            if !(value.is_finite() && value > 0.0) {
                return Err(CostError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    fn fields(&self) -> [f64; 4] {
        [self.clock_period_ns, self.baseline_power, self.skewed_power_factor, self.skewed_area_factor]
    }

    fn field_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "clock_period_ns" | "clock_period" => &mut self.clock_period_ns,
            "baseline_power" => &mut self.baseline_power,
            "skewed_power_factor" => &mut self.skewed_power_factor,
            "skewed_area_factor" => &mut self.skewed_area_factor,
            _ => return None,
        })
    }

    /// Overlay `key = value` lines onto `self`. `#` starts a comment.
    pub fn apply_config(mut self, text: &str) -> Result<Self, CostError> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CostError::Parse { line: line_no, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| err(format!("`{}` is not a number", value.trim())))?;
            *self.field_mut(key).ok_or_else(|| err(format!("unknown key `{key}` (known: {})", KEYS.join(", "))))? =
                value;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_config(text: &str) -> Result<Self, CostError> {
        CostParams::default().apply_config(text)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CostError::Io { path: path.display().to_string(), source })?;
        Self::from_config(&text)
    }

    pub fn power(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Skewed => self.baseline_power * self.skewed_power_factor,
            Mode::Baseline | Mode::AlignFirst => self.baseline_power,
        }
    }

    /// Smallest cycle-saving fraction that pays for the extra power.
    pub fn breakeven_saving(&self) -> f64 {
        1.0 - 1.0 / self.skewed_power_factor
    }
}

pub fn energy(cycles: u64, mode: Mode, p: &CostParams) -> f64 {
    cycles as f64 * p.clock_period_ns * p.power(mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossover {
    /// Skewed mode uses more energy.
    Increase,
    Decrease,
    /// At the break-even point.
    Neutral,
}

impl Crossover {
    pub fn as_str(self) -> &'static str {
        match self {
            Crossover::Increase => "increase",
            Crossover::Decrease => "decrease",
            Crossover::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Crossover {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tolerance on the saving fraction for [`Crossover::Neutral`].
pub const CROSSOVER_EPS: f64 = 1e-4;

/// Classify a layer by its skewed-vs-baseline cycle saving.
pub fn crossover(baseline_cycles: u64, skewed_cycles: u64, p: &CostParams) -> Crossover {
    if baseline_cycles == 0 {
        return Crossover::Neutral;
    }
    let saving = 1.0 - skewed_cycles as f64 / baseline_cycles as f64;
    classify_saving(saving, p)
}

pub fn classify_saving(saving: f64, p: &CostParams) -> Crossover {
    let t = p.breakeven_saving();
    if (saving - t).abs() <= CROSSOVER_EPS {
        Crossover::Neutral
    } else if saving < t {
        Crossover::Increase
    } else {
        Crossover::Decrease
    }
}
