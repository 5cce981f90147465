//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sysfp_core::engine::{drain_cycles, simulate, tile_cycles, ArrayConfig, PipelineEvent, Stage};
use sysfp_core::fp::{decode, lift, round_to_format, FpFormat};
use sysfp_core::matrix::Matrix;
use sysfp_core::verify::{random_normal, run_verify, OperandDist, VerifyConfig};
use sysfp_core::workloads::{tile_plan, to_gemm, Network};
use sysfp_core::Mode;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn bit_equivalence() -> Outcome {
    const DEPTHS: [usize; 8] = [1, 2, 3, 4, 8, 16, 64, 128];
    const TRIALS: u64 = 100_000;
    let mut total = 0;
    let mut failures = Vec::new();
    for (seed, dist) in [(1, OperandDist::Normal), (2, OperandDist::Clustered { spread: 6 })] {
        let mut cfg = VerifyConfig::new(DEPTHS.to_vec(), TRIALS, seed);
        cfg.dist = dist;
        cfg.check_oracle = false;
        let r = run_verify(&cfg);
        for d in &r.per_depth {
            total += d.trials;
            if d.trials < TRIALS || d.skewed_mismatches > 0 {
                failures.push(format!("depth {} ({:?}): {} mismatches", d.depth, dist, d.skewed_mismatches));
            }
        }
    }
    if failures.is_empty() {
        outcome(true, format!("{total} chains over depths {DEPTHS:?}, {TRIALS} per depth per distribution, 0 mismatches"))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn oracle_equivalence() -> Outcome {
    let depths: Vec<usize> = (1..=32).collect();
    let (mut checked, mut bad, mut trials) = (0, 0, 0);
    for (seed, dist) in [
        (10, OperandDist::Clustered { spread: 4 }),
        (11, OperandDist::Clustered { spread: 6 }),
        (12, OperandDist::Normal),
    ] {
        let mut cfg = VerifyConfig::new(depths.clone(), 1_000, seed);
        cfg.dist = dist;
        cfg.zero_prob = 0.02;
        let r = run_verify(&cfg);
        trials += r.trials();
        checked += r.oracle_checked();
        bad += r.per_depth.iter().map(|d| d.oracle_mismatches).sum::<u64>();
    }
    outcome(
        checked >= 10_000 && bad == 0,
        format!("{checked} lossless chains of depth 1..=32 (of {trials} drawn) equal the exact rounded sum, {bad} mismatches"),
    )
}

/// Value straight from the bit fields, for normal codes.
fn field_value(bits: u32, fmt: FpFormat) -> f64 {
    let e = (bits >> fmt.frac_bits) & ((1 << fmt.exp_bits) - 1);
    let f = bits & ((1 << fmt.frac_bits) - 1);
    let v = (1.0 + f as f64 / (1u64 << fmt.frac_bits) as f64) * 2f64.powi(e as i32 - fmt.bias);
    if bits >> (fmt.width() - 1) == 1 {
        -v
    } else {
        v
    }
}

fn format_exhaustiveness() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for fmt in [FpFormat::BF16, FpFormat::FP8_E4M3, FpFormat::FP8_E5M2] {
        let (mut normals, mut excluded, mut bad) = (0u32, 0u32, 0u32);
        for code in 0..1u32 << fmt.width() {
            if !fmt.is_normal_code(code) {
                excluded += 1;
                // excluded classes never decode to a nonzero value
                if let Ok(u) = decode(code, fmt) {
                    if !u.is_zero {
                        bad += 1;
                    }
                }
                continue;
            }
            normals += 1;
            let Ok(u) = decode(code, fmt) else {
                bad += 1;
                continue;
            };
            let value_ok =
                u.is_zero || u.sig as f64 * 2f64.powi(u.exp - fmt.frac_bits as i32) == field_value(code, fmt).abs();
            let r = round_to_format(&lift(&u, fmt), fmt);
            if !value_ok || r.bits != code || r.saturated || r.flushed {
                bad += 1;
            }
        }
        pass &= bad == 0;
        lines.push(format!("{fmt}: {normals} normal codes round-trip, {excluded} zero/subnormal/special codes excluded, {bad} failures"));
    }
    let zero_ok = [FpFormat::BF16, FpFormat::FP8_E4M3, FpFormat::FP8_E5M2].iter().all(|&fmt| {
        let neg = 1 << (fmt.width() - 1);
        [0, neg].iter().all(|&code| {
            decode(code, fmt).is_ok_and(|u| {
                u.is_zero && u.sign.is_neg() == (code != 0) && round_to_format(&lift(&u, fmt), fmt).bits == code
            })
        })
    });
    lines.push(format!("signed zeros {}", if zero_ok { "round-trip" } else { "FAIL" }));
    outcome(pass && zero_ok, lines.join("; "))
}

fn stage_cycle(events: &[PipelineEvent], row: usize, stage: Stage) -> Option<u64> {
    events.iter().find(|e| e.row == row && e.stage == stage && e.vector == 0 && e.col == 0).map(|e| e.cycle)
}

fn schedule_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut failures = Vec::new();
    for rows in 1..=128usize {
        let a = Matrix::from_fn(2, rows, |_, _| random_normal(&mut rng, FpFormat::BF16, OperandDist::Clustered { spread: 5 }));
        let w = Matrix::from_fn(rows, 1, |_, _| random_normal(&mut rng, FpFormat::BF16, OperandDist::Clustered { spread: 5 }));
        let (b, be) = simulate(ArrayConfig::new(rows, 1, Mode::Baseline), &a, &w, true).unwrap();
        let (s, se) = simulate(ArrayConfig::new(rows, 1, Mode::Skewed), &a, &w, true).unwrap();
        if b.vector_latency - s.vector_latency != rows as u64 - 1 {
            failures.push(format!("rows {rows}: drains {} vs {}", b.vector_latency, s.vector_latency));
        }
        if b.vector_latency != drain_cycles(rows, Mode::Baseline) || s.vector_latency != drain_cycles(rows, Mode::Skewed) {
            failures.push(format!("rows {rows}: drain differs from the closed form"));
        }
        if b.outputs != s.outputs {
            failures.push(format!("rows {rows}: outputs differ"));
        }
        for r in 1..rows {
            let (b1, b2) = (stage_cycle(&be, r, Stage::Stage1), stage_cycle(&be, r - 1, Stage::Stage2));
            let (s1, s2) = (stage_cycle(&se, r, Stage::Stage1), stage_cycle(&se, r - 1, Stage::Stage2));
            // baseline: next stage 1 strictly after the previous stage 2;
            // skewed: in the same cycle
            if !matches!((b1, b2), (Some(x), Some(y)) if x == y + 1) {
                failures.push(format!("rows {rows}: baseline row {r} not serialized"));
            }
            if !matches!((s1, s2), (Some(x), Some(y)) if x == y) {
                failures.push(format!("rows {rows}: skewed row {r} does not overlap"));
            }
        }
        // stage 2 of each PE follows its own stage 1 by one cycle in both modes
        for ev in [&be, &se] {
            for r in 0..rows {
                if stage_cycle(ev, r, Stage::Stage2) != stage_cycle(ev, r, Stage::Stage1).map(|c| c + 1) {
                    failures.push(format!("rows {rows}: PE {r} stage order"));
                }
            }
        }
    }
    if failures.is_empty() {
        outcome(true, "rows 1..=128: baseline drain - skewed drain = rows - 1, overlap/serialization as expected")
    } else {
        failures.truncate(5);
        outcome(false, failures.join("; "))
    }
}

fn network_csv(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sysfp"))
        .arg("network")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

/// `(layer, latency reduction %, energy reduction %, crossover, area)` per skewed row.
fn skewed_rows(csv: &str) -> Vec<(String, f64, f64, String, String)> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[1] == "skewed")
        .map(|f| (f[0].to_string(), f[4].parse().unwrap(), f[5].parse().unwrap(), f[6].to_string(), f[7].to_string()))
        .collect()
}

/// Engine-measured cycles of every distinct tile shape, with the vector count
/// capped to keep the run short, against the analytic cost.
fn sampled_tiles(net: Network) -> Result<usize, String> {
    let mut shapes = BTreeSet::new();
    for l in net.layers() {
        let g = to_gemm(&l).unwrap();
        for c in tile_plan(g, 128, 128).classes {
            shapes.insert((c.rows_used as usize, c.cols_used as usize, g.m.min(3) as usize));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for &(k, n, m) in &shapes {
        let a = Matrix::from_fn(m, k, |_, _| random_normal(&mut rng, FpFormat::BF16, OperandDist::Normal));
        let w = Matrix::from_fn(k, n, |_, _| random_normal(&mut rng, FpFormat::BF16, OperandDist::Normal));
        let mut outs = Vec::new();
        for mode in [Mode::Baseline, Mode::Skewed] {
            let (r, _) = simulate(ArrayConfig::new(128, 128, mode), &a, &w, false).map_err(|e| e.to_string())?;
            if r.total_cycles != tile_cycles(128, n, m, mode) {
                return Err(format!("{k}x{n} tile, m={m}, {mode}: measured {} cycles", r.total_cycles));
            }
            outs.push(r.outputs);
        }
        if outs[0] != outs[1] {
            return Err(format!("{k}x{n} tile outputs differ"));
        }
    }
    Ok(shapes.len())
}

fn calibration() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (net, lat_target, en_target) in [("mobilenet", 16.0, 8.0), ("resnet50", 21.0, 11.0)] {
        let csv = match network_csv(&["--net", net]) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("{net}: {e}")),
        };
        let Some(total) = skewed_rows(&csv).into_iter().find(|r| r.0 == "TOTAL") else {
            return outcome(false, format!("{net}: no TOTAL row"));
        };
        let ok = (total.1 - lat_target).abs() <= 5.0 && (total.2 - en_target).abs() <= 4.0;
        pass &= ok;
        parts.push(format!(
            "{net}: latency reduced {:.2}% (target {lat_target}±5), energy reduced {:.2}% (target {en_target}±4)",
            total.1, total.2
        ));
    }
    for net in [Network::MobileNet, Network::ResNet50] {
        match sampled_tiles(net) {
            Ok(n) => parts.push(format!("{n} {net:?} tile shapes confirmed on the engine")),
            Err(e) => {
                pass = false;
                parts.push(e);
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn crossover() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for net in ["mobilenet", "resnet50"] {
        let rows: Vec<_> = match network_csv(&["--net", net]) {
            Ok(c) => skewed_rows(&c).into_iter().filter(|r| r.0 != "TOTAL").collect(),
            Err(e) => return outcome(false, e),
        };
        let early = &rows[..rows.len() / 3];
        let late = &rows[rows.len() / 2..];
        let early_inc = early.iter().filter(|r| r.3 == "increase").count();
        let late_dec = late.iter().filter(|r| r.3 == "decrease").count();
        let ok = early_inc >= 1 && 2 * late_dec > late.len();
        pass &= ok;
        parts.push(format!(
            "{net}: {early_inc}/{} early layers increase, {late_dec}/{} late layers decrease",
            early.len(),
            late.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn area_reporting() -> Outcome {
    let default_ok = network_csv(&["--net", "mobilenet"])
        .map(|c| skewed_rows(&c).iter().all(|r| r.4 == "1.09"))
        .unwrap_or(false);
    let dir = tempfile::tempdir().unwrap();
    let cost = dir.path().join("cost.cfg");
    std::fs::write(&cost, "skewed_area_factor = 1.31\n").unwrap();
    let file_ok = network_csv(&["--net", "resnet50", "--cost", cost.to_str().unwrap()])
        .map(|c| skewed_rows(&c).iter().all(|r| r.4 == "1.31"))
        .unwrap_or(false);
    outcome(default_ok && file_ok, "default report carries 1.09 on every skewed row; a cost file value flows through")
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("bit-equivalence", bit_equivalence),
        ("oracle-equivalence", oracle_equivalence),
        ("format-exhaustiveness", format_exhaustiveness),
        ("schedule-property", schedule_property),
        ("calibration", calibration),
        ("crossover", crossover),
        ("area-reporting", area_reporting),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
