//! Per-layer baseline vs skewed comparison and its CSV form.

use std::io::Write;

use crate::cost::{crossover, energy, CostParams, Crossover};
use crate::datapath::Mode;
use crate::workloads::{tile_plan, to_gemm, LayerShape, WorkloadError};

pub const REPORT_HEADER: &str = "layer,mode,cycles,energy,latency_delta_pct,energy_delta_pct,crossover,area_factor";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub baseline_cycles: u64,
    pub skewed_cycles: u64,
    pub baseline_energy: f64,
    pub skewed_energy: f64,
    pub utilization: f64,
    pub crossover: Crossover,
}

/// Percentage saved by the skewed mode; positive means skewed is better.
pub fn reduction_pct(baseline: f64, skewed: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - skewed) / baseline
    }
}

impl LayerReport {
    pub fn latency_reduction_pct(&self) -> f64 {
        reduction_pct(self.baseline_cycles as f64, self.skewed_cycles as f64)
    }

    pub fn energy_reduction_pct(&self) -> f64 {
        reduction_pct(self.baseline_energy, self.skewed_energy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkReport {
    pub layers: Vec<LayerReport>,
    pub total: LayerReport,
    pub cost: CostParams,
}

pub fn run_network(
    layers: &[LayerShape],
    rows: usize,
    cols: usize,
    cost: &CostParams,
) -> Result<NetworkReport, WorkloadError> {
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        let plan = tile_plan(to_gemm(l)?, rows, cols);
        let (b, s) = (plan.cycles(Mode::Baseline), plan.cycles(Mode::Skewed));
        out.push(LayerReport {
            name: l.name.clone(),
            baseline_cycles: b,
            skewed_cycles: s,
            baseline_energy: energy(b, Mode::Baseline, cost),
            skewed_energy: energy(s, Mode::Skewed, cost),
            utilization: plan.utilization(),
            crossover: crossover(b, s, cost),
        });
    }
    let (b, s) = (out.iter().map(|l| l.baseline_cycles).sum(), out.iter().map(|l| l.skewed_cycles).sum());
    let total = LayerReport {
        name: "TOTAL".into(),
        baseline_cycles: b,
        skewed_cycles: s,
        baseline_energy: out.iter().map(|l| l.baseline_energy).sum(),
        skewed_energy: out.iter().map(|l| l.skewed_energy).sum(),
        utilization: 0.0,
        crossover: crossover(b, s, cost),
    };
    Ok(NetworkReport { layers: out, total, cost: *cost })
}

impl NetworkReport {
    /// Two rows per layer and two `TOTAL` rows. Baseline rows carry zero
    /// deltas and no crossover flag.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for l in self.layers.iter().chain(std::iter::once(&self.total)) {
            writeln!(w, "{},baseline,{},{:.3},0.000,0.000,,1", l.name, l.baseline_cycles, l.baseline_energy)?;
            writeln!(
                w,
                "{},skewed,{},{:.3},{:.3},{:.3},{},{}",
                l.name,
                l.skewed_cycles,
                l.skewed_energy,
                l.latency_reduction_pct(),
                l.energy_reduction_pct(),
                l.crossover,
                self.cost.skewed_area_factor
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tile_cycles;
    use crate::workloads::{LayerKind, Network};

    #[test]
    fn empty_network() {
        let r = run_network(&[], 128, 128, &CostParams::default()).unwrap();
        assert!(r.layers.is_empty());
        assert_eq!((r.total.baseline_cycles, r.total.skewed_cycles), (0, 0));
        assert_eq!(r.total.energy_reduction_pct(), 0.0);
    }

    #[test]
    fn single_layer_matches_formula() {
        let l = LayerShape {
            name: "fc".into(),
            kind: LayerKind::FC,
            in_ch: 128,
            out_ch: 128,
            kernel_h: 1,
            kernel_w: 1,
            in_h: 1,
            in_w: 1,
            stride: 1,
            pad: 0,
        };
        let p = CostParams::default();
        let r = run_network(&[l], 128, 128, &p).unwrap();
        let s = tile_cycles(128, 128, 1, Mode::Skewed);
        assert_eq!(r.layers[0].skewed_cycles, s);
        assert_eq!(r.layers[0].skewed_energy, energy(s, Mode::Skewed, &p));
        assert_eq!(r.total, LayerReport { name: "TOTAL".into(), utilization: 0.0, ..r.layers[0].clone() });
    }

    #[test]
    fn csv_shape() {
        let p = CostParams::default();
        let r = run_network(&Network::MobileNet.layers(), 128, 128, &p).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 29);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 8));
        assert!(lines.last().unwrap().starts_with("TOTAL,skewed,"));
        assert!(lines.last().unwrap().ends_with(",1.09"));
        assert!(r.total.skewed_cycles < r.total.baseline_cycles);
    }
}
