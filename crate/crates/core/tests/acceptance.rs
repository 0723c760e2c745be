//! Acceptance checks. Every criterion prints one PASS/FAIL line to stderr
//! (written directly, so it shows up without `--nocapture`), and the test
//! fails if any criterion failed.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aimc_core::calibration::{
    optimize_conductance_ranges, optimize_input_range, CalibrationConfig,
};
use aimc_core::experiments::{
    default_time_grid, mvm_workload, run_ablation, run_mvm_error, AblationCell, MvmErrorSettings,
    RangeMode,
};
use aimc_core::harness::{run_experiment, Artifact, ExperimentConfig, ExperimentKind};
use aimc_core::ir_drop::{dense_ir_drop_currents, ir_drop_currents};
use aimc_core::quant::dac_quantize;
use aimc_core::train::{
    input_range_gradient, tile_train_backward, tile_train_forward, TileOptions,
};
use aimc_core::{
    tile_forward_batch, AnalogTile, ForwardMode, Matrix, NoiseModel, RngStream, TileHardwareConfig,
};

type Outcome = Result<String, String>;

fn line(text: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{text}");
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed < budget {
        Ok(())
    } else {
        Err(format!("runtime {elapsed:.2?} over the {budget:?} budget"))
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1. transformer mapping report
fn tile_count_and_utilization() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default()
        .resolve(ExperimentKind::MapReport)
        .map_err(|e| e.to_string())?;
    let report = aimc_core::harness::map_report(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let util = 100.0 * report.avg_utilization;
    check(report.num_tiles == 486, || {
        format!("{} tiles", report.num_tiles)
    })?;
    check(report.mapped_params == 85_609_730, || {
        format!("{} mapped parameters", report.mapped_params)
    })?;
    check((util - 61.57).abs() <= 0.01, || {
        format!("utilization {util:.4} %")
    })?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "{} tiles, {} mapped parameters, {util:.3} % utilization in {elapsed:.2?}",
        report.num_tiles, report.mapped_params
    ))
}

fn mvm_rows(times: &[f64]) -> Result<Vec<aimc_core::experiments::MvmErrorRow>, String> {
    run_mvm_error(
        &TileHardwareConfig::default(),
        &NoiseModel::default(),
        &MvmErrorSettings::default(),
        times,
        1,
    )
    .map_err(|e| e.to_string())
}

// 2. error right after programming
fn error_at_t0(first_row: &mut Option<String>) -> Outcome {
    let start = Instant::now();
    let rows = mvm_rows(&[20.0])?;
    let elapsed = start.elapsed();
    let e = rows[0].l2_error_percent;
    *first_row = Some(format!("{},{},{}", rows[0].time_seconds, e, rows[0].seed));
    check((10.0..=18.0).contains(&e), || {
        format!("L2 error {e:.3} % outside 10-18 %")
    })?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("L2 error {e:.2} % at t0 in {elapsed:.2?}"))
}

/// Coefficient of determination of the least-squares line through (x, y).
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (icept + slope * a)).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

// 3. error over time
fn error_over_time(first_row: &mut Option<String>) -> Outcome {
    let start = Instant::now();
    let grid = default_time_grid();
    let rows = mvm_rows(&grid)?;
    let elapsed = start.elapsed();
    let errs: Vec<f64> = rows.iter().map(|r| r.l2_error_percent).collect();
    *first_row = Some(format!(
        "{},{},{}",
        rows[0].time_seconds, errs[0], rows[0].seed
    ));
    check(errs.windows(2).all(|w| w[1] >= w[0]), || {
        format!("not monotone: {errs:?}")
    })?;
    let logt: Vec<f64> = grid.iter().map(|t| t.ln()).collect();
    let r2 = r_squared(&logt, &errs);
    check(r2 >= 0.9, || format!("R^2 {r2:.4} < 0.9 for {errs:?}"))?;
    within(elapsed, Duration::from_secs(120))?;
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2}")).collect();
    Ok(format!(
        "errors [{}] %, R^2 {r2:.3}, in {elapsed:.2?}",
        shown.join(", ")
    ))
}

// 4. iterative IR-drop solve against the direct nodal solve
fn ir_drop_oracle() -> Outcome {
    let start = Instant::now();
    let mut gen = rng(4);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let m = gen.random_range(1..=8);
        let n = gen.random_range(1..=8);
        let g = Matrix::from_fn(m, n, |_, _| gen.random_range(0.0..25.0));
        let v: Vec<f64> = (0..m).map(|_| gen.random_range(-0.2..0.2)).collect();
        let r = 10f64.powf(gen.random_range(-2.0..1.0));
        let it = ir_drop_currents(&g, &v, r).map_err(|e| e.to_string())?;
        let dense = dense_ir_drop_currents(&g, &v, r).map_err(|e| e.to_string())?;
        let scale = dense
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()))
            .max(f64::MIN_POSITIVE);
        let err = it
            .iter()
            .zip(&dense)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
            / scale;
        worst = worst.max(err);
        check(err <= 1e-9, || {
            format!("case {case} ({m}x{n}, R={r}): relative error {err:e}")
        })?;
        // no wire resistance: the plain dot product, bit for bit
        let ideal: Vec<f64> = (0..n)
            .map(|j| {
                let mut acc = 0.0;
                for (i, vi) in v.iter().enumerate() {
                    acc += vi * g.get(i, j);
                }
                acc
            })
            .collect();
        let zero = ir_drop_currents(&g, &v, 0.0).map_err(|e| e.to_string())?;
        check(zero == ideal, || {
            format!("case {case}: R=0 gives {zero:?}, ideal {ideal:?}")
        })?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "200 tiles, worst relative error {worst:.1e}, R=0 exact, in {elapsed:.2?}"
    ))
}

/// Term-by-term evaluation of the input-range learning rule.
fn range_rule_terms(x: &[f64], g: &[f64], x_r: f64, eta: f64) -> f64 {
    let mut total = 0.0;
    let mut inside = 0usize;
    for k in 0..x.len() {
        if x[k] >= x_r {
            total += g[k].min(0.0);
        } else if x[k] <= -x_r {
            total -= g[k].max(0.0);
        } else {
            inside += 1;
        }
    }
    total + x_r * eta * inside as f64 / x.len() as f64
}

// 5. range learning gradients
fn range_gradients() -> Outcome {
    let start = Instant::now();
    let mut gen = rng(5);
    for case in 0..1000 {
        let n = gen.random_range(1..64);
        let x_r = gen.random_range(0.05..3.0);
        let eta = gen.random_range(0.0..0.1);
        let x: Vec<f64> = (0..n).map(|_| gen.random_range(-4.0..4.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| gen.random_range(-1.0..1.0)).collect();
        let got = input_range_gradient(&x, &g, x_r, eta);
        let want = range_rule_terms(&x, &g, x_r, eta);
        check(got == want, || format!("instance {case}: {got} vs {want}"))?;
    }
    let opts = TileOptions {
        sigma_w: 0.05,
        sigma_out: 0.05,
        ..TileOptions::exact()
    };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut gen = rng(500 + seed);
        let w = Matrix::from_fn(4, 4, |_, _| gen.random_range(-1.0..1.0));
        let x = Matrix::from_fn(3, 4, |_, _| gen.random_range(-1.0..1.0));
        let target = Matrix::from_fn(3, 4, |_, _| gen.random_range(-1.0..1.0));
        let eta: Vec<f64> = (0..4).map(|_| gen.random_range(0.2..1.0)).collect();
        let loss = |e: &[f64]| -> f64 {
            let mut noise = RngStream::new(seed, 9).generator();
            let (y, _) = tile_train_forward(&w, &x, 1.5, e, &opts, &mut noise).unwrap();
            0.5 * y
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let mut noise = RngStream::new(seed, 9).generator();
        let (y, cache) =
            tile_train_forward(&w, &x, 1.5, &eta, &opts, &mut noise).map_err(|e| e.to_string())?;
        let dy = y
            .zip_map(&target, |a, b| a - b)
            .map_err(|e| e.to_string())?;
        let grads = tile_train_backward(&cache, &dy, &eta, &opts, 0.0);
        for j in 0..4 {
            let h = 1e-6;
            let (mut ep, mut em) = (eta.clone(), eta.clone());
            ep[j] += h;
            em[j] -= h;
            let fd = (loss(&ep) - loss(&em)) / (2.0 * h);
            let rel = (fd - grads.eta[j]).abs() / fd.abs().max(1e-8);
            worst = worst.max(rel);
            check(rel <= 1e-5, || {
                format!(
                    "seed {seed} column {j}: {} vs finite difference {fd}",
                    grads.eta[j]
                )
            })?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "1000 exact instances, scale gradient worst relative error {worst:.1e}, in {elapsed:.2?}"
    ))
}

fn nearest_rank(v: &[f64], k: f64) -> f64 {
    let mut s: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let rank = ((k / 100.0) * n as f64).ceil().max(1.0).min(n as f64) as usize;
    s[rank - 1]
}

/// Recomputed peak column current (µA) of column `j`: mean plus `n_std`
/// standard deviations of |I| per polarity, larger polarity wins.
fn peak_current(tile: &AnalogTile, samples: &Matrix, j: usize, n_std: f64) -> f64 {
    let hw = &tile.hardware;
    let y = hw.y_factor();
    let mut inputs = Vec::new();
    for s in 0..samples.rows() {
        let q = dac_quantize(samples.row(s), tile.input_range, hw.dac_bits).unwrap();
        let u: Vec<f64> = q.iter().map(|v| v / tile.input_range).collect();
        if u.iter().any(|&v| v != 0.0) {
            inputs.push(u);
        }
    }
    let mut peak = 0.0f64;
    for g in [&tile.g_plus, &tile.g_minus] {
        let col = g.column(j);
        let cur: Vec<f64> = inputs
            .iter()
            .map(|u| (hw.v_read * u.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>() * y).abs())
            .collect();
        let n = cur.len() as f64;
        let mu = cur.iter().sum::<f64>() / n;
        let sd = (cur.iter().map(|c| (c - mu).powi(2)).sum::<f64>() / n).sqrt();
        peak = peak.max(mu + n_std * sd);
    }
    peak / y
}

// 6. calibration post-conditions
fn calibration_postconditions() -> Outcome {
    let start = Instant::now();
    let mut gen = rng(6);
    for case in 0..1000 {
        let n = gen.random_range(1..200);
        let v: Vec<f64> = (0..n).map(|_| gen.random_range(-5.0..5.0)).collect();
        let k = gen.random_range(0.5..100.0);
        let got = optimize_input_range(&v, k).map_err(|e| e.to_string())?;
        check(got == nearest_rank(&v, k), || {
            format!("set {case}: {got} vs {}", nearest_rank(&v, k))
        })?;
    }
    let cal_cfg = CalibrationConfig::default();
    let (mut saturating, mut floored) = (0, 0);
    for case in 0..30u64 {
        let mut gen = rng(600 + case);
        let (m, n) = (gen.random_range(4..48), gen.random_range(2..24));
        let hw = TileHardwareConfig {
            saturating_pes: gen.random_range(0.2..3.0),
            ..TileHardwareConfig::with_size(m, n)
        };
        let w = Matrix::from_fn(m, n, |_, _| gen.random_range(-1.0..1.0));
        let samples = Matrix::from_fn(64, m, |_, _| {
            gen.random_range(-1.0..1.0) * gen.random_range(0.0..2.0)
        });
        let tile = AnalogTile::from_unit_weights(&w, &hw, &NoiseModel::noiseless())
            .map_err(|e| e.to_string())?;
        let cal = cal_cfg.resolve(&hw).map_err(|e| e.to_string())?;
        let mut once = tile.clone();
        once.set_input_range(optimize_input_range(samples.as_slice(), cal.percentile_k).unwrap())
            .unwrap();
        let (once, reports) =
            optimize_conductance_ranges(&once, &samples, &cal).map_err(|e| e.to_string())?;
        for r in &reports {
            saturating += r.saturating as usize;
            floored += r.floored as usize;
            if !r.floored {
                let ip = peak_current(&once, &samples, r.column, cal.n_std);
                check(ip <= cal.i_sat, || {
                    format!(
                        "tile {case} column {}: I_P {ip} > I_S {}",
                        r.column, cal.i_sat
                    )
                })?;
            }
        }
        let mut twice = once.clone();
        twice
            .set_input_range(optimize_input_range(samples.as_slice(), cal.percentile_k).unwrap())
            .unwrap();
        let (twice, _) =
            optimize_conductance_ranges(&twice, &samples, &cal).map_err(|e| e.to_string())?;
        check(twice.input_range == once.input_range, || {
            format!("tile {case}: input range moved")
        })?;
        for (a, b) in once.g_col_cap.iter().zip(&twice.g_col_cap) {
            check((a - b).abs() <= 1e-12 * a.abs(), || {
                format!("tile {case}: cap {a} then {b}")
            })?;
        }
        let probe = Matrix::from_fn(16, m, |_, _| gen.random_range(-0.5..0.5));
        let before =
            tile_forward_batch(&tile, &probe, &ForwardMode::ideal(), RngStream::new(0, 0)).unwrap();
        let after =
            tile_forward_batch(&once, &probe, &ForwardMode::ideal(), RngStream::new(0, 0)).unwrap();
        let scale = before.max_abs().max(f64::MIN_POSITIVE);
        let diff = before
            .as_slice()
            .iter()
            .zip(after.as_slice())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        check(diff <= 1e-10 * scale, || {
            format!("tile {case}: ideal output moved by {diff:e}")
        })?;
    }
    check(saturating > 0, || "no saturating column exercised".into())?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "1000 percentile sets exact; 30 tiles, {saturating} saturating columns ({floored} floored), idempotent, ideal-equivalent, in {elapsed:.2?}"
    ))
}

fn cell(cells: &[AblationCell], input: RangeMode, conductance: RangeMode, t: f64) -> &AblationCell {
    cells
        .iter()
        .find(|c| c.input == input && c.conductance == conductance && c.time_seconds == t)
        .expect("ablation cell")
}

// 7. toy-model calibration ablation
fn toy_ablation() -> Outcome {
    use RangeMode::{Learned, LearnedPt, None as No, Pt};
    let start = Instant::now();
    let cfg = ExperimentConfig::default()
        .resolve(ExperimentKind::Ablation)
        .map_err(|e| e.to_string())?;
    let seeds = cfg.seeds();
    check(seeds.len() == 10, || format!("{} seeds", seeds.len()))?;
    let cells = run_ablation(
        &cfg.hardware,
        &cfg.noise,
        &cfg.calibration,
        &cfg.train,
        &cfg.ablation,
        &seeds,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let t0 = cfg.ablation.eval_times[0];
    let none = cell(&cells, No, No, t0);
    let input = cell(&cells, Pt, No, t0);
    let cond = cell(&cells, No, Pt, t0);
    let both = cell(&cells, Pt, Pt, t0);
    let learned = cell(&cells, Learned, Learned, t0);
    let learned_pt = cell(&cells, LearnedPt, LearnedPt, t0);
    let m = |c: &AblationCell| c.mean();
    let summary = format!(
        "none {:.4}, input {:.4}, conductance {:.4}, both {:.4}, learned {:.4}, learned+PT {:.4}",
        m(none),
        m(input),
        m(cond),
        m(both),
        m(learned),
        m(learned_pt)
    );
    check(m(both) >= m(input) && m(both) >= m(cond), || {
        format!("both below a single PT: {summary}")
    })?;
    check(m(input) >= m(none) && m(cond) >= m(none), || {
        format!("single PT below none: {summary}")
    })?;
    check(m(learned_pt) >= m(learned), || {
        format!("PT on learned ranges below learned only: {summary}")
    })?;
    let (n1, n2) = (both.accuracies.len() as f64, none.accuracies.len() as f64);
    let pooled_var =
        ((n1 - 1.0) * both.std().powi(2) + (n2 - 1.0) * none.std().powi(2)) / (n1 + n2 - 2.0);
    let se = (pooled_var * (1.0 / n1 + 1.0 / n2)).sqrt();
    let gap = m(both) - m(none);
    check(gap > 2.0 * se, || {
        format!("gap {gap:.4} not above 2 SE {:.4}: {summary}", 2.0 * se)
    })?;
    within(elapsed, Duration::from_secs(600))?;
    Ok(format!(
        "{summary}; gap {gap:.4} > 2 SE {:.4}; in {elapsed:.2?}",
        2.0 * se
    ))
}

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let doc = match kind {
        ExperimentKind::MvmError => {
            r#"{"hardware": {"rows": 64, "cols": 48}, "mvm": {"n_inputs": 200}, "repetitions": 2}"#
        }
        ExperimentKind::MapReport => "{}",
        ExperimentKind::Calibrate => {
            r#"{"tile_calibration": {"rows": 32, "cols": 16, "n_eval": 64}, "repetitions": 2}"#
        }
        ExperimentKind::TrainDemo | ExperimentKind::Ablation => {
            r#"{"repetitions": 2,
                "train": {"epochs": 2, "pretrain_epochs": 3, "initial_input_range": 2.0, "learn_input_range": true},
                "ablation": {"dims": [2, 12, 12, 2], "tile_size": 8, "data": {"n_train": 128, "n_val": 64}}}"#
        }
    };
    ExperimentConfig::from_json(doc).unwrap()
}

// 8. reproducible artifacts
fn reproducible_artifacts(t0_from_2: &Option<String>, t0_from_3: &Option<String>) -> Outcome {
    let start = Instant::now();
    let mut total_rows = 0;
    for kind in ExperimentKind::ALL {
        let cfg = small_config(kind)
            .resolve(kind)
            .map_err(|e| e.to_string())?;
        let a = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let b = run_experiment(&cfg).map_err(|e| e.to_string())?;
        check(a.artifacts.len() == b.artifacts.len(), || {
            format!("{kind}: artifact count differs")
        })?;
        for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
            let (rx, ry) = (x.render(), y.render());
            let (dx, dy) = (Artifact::data_rows(&rx), Artifact::data_rows(&ry));
            check(!dx.is_empty(), || {
                format!("{kind}: no data rows in {}", x.name)
            })?;
            check(dx == dy, || {
                format!("{kind}: data rows of {} differ between runs", x.name)
            })?;
            total_rows += dx.len();
        }
    }
    // the full-size t0 point came out of two separate runs above
    if let (Some(a), Some(b)) = (t0_from_2, t0_from_3) {
        check(a == b, || format!("full-size t0 rows differ: {a} vs {b}"))?;
    }
    Ok(format!(
        "5 experiments re-run, {total_rows} data rows identical, full-size t0 row identical across runs, in {:.2?}",
        start.elapsed()
    ))
}

#[test]
fn acceptance() {
    let mut t0_a = None;
    let mut t0_b = None;
    let mut failures = Vec::new();
    {
        let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
            let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
                Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into()))
            });
            match outcome {
                Ok(detail) => line(&format!("criterion {n} PASS {name}: {detail}")),
                Err(why) => {
                    line(&format!("criterion {n} FAIL {name}: {why}"));
                    failures.push(n);
                }
            }
        };
        run(
            1,
            "tile count and utilization",
            &mut tile_count_and_utilization,
        );
        run(2, "MVM error at t0", &mut || error_at_t0(&mut t0_a));
        run(3, "MVM error over time", &mut || error_over_time(&mut t0_b));
        run(4, "IR-drop solver vs direct solve", &mut ir_drop_oracle);
        run(5, "range learning gradients", &mut range_gradients);
        run(
            6,
            "calibration post-conditions",
            &mut calibration_postconditions,
        );
        run(7, "toy-model calibration ablation", &mut toy_ablation);
        let (a, b) = (t0_a.clone(), t0_b.clone());
        run(8, "reproducible CSV artifacts", &mut || {
            reproducible_artifacts(&a, &b)
        });
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

#[test]
fn workload_matches_its_description() {
    // uniform inputs in [-1, 1] and clipped normal weights
    let s = MvmErrorSettings::default();
    let (w, x) = mvm_workload(64, 32, &s, RngStream::new(3, 0));
    assert_eq!(
        (w.rows(), w.cols(), x.rows(), x.cols()),
        (64, 32, s.n_inputs, 64)
    );
    assert!(w.max_abs() <= 1.0 && x.max_abs() <= 1.0);
}
