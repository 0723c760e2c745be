// SPDX-License-Identifier: Apache-2.0
//! Experiment drivers shared by the CLI and the test suite.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    optimize_conductance_ranges, optimize_input_range, CalibrationConfig, CalibrationReport,
    TileCalibration,
};
use crate::config::{NoiseModel, TileHardwareConfig};
use crate::dataset::{moons_split, Dataset, MoonsConfig};
use crate::error::{AimcError, Result};
use crate::forward::{ideal_mvm, tile_forward_batch, ForwardMode};
use crate::matrix::Matrix;
use crate::network::{accuracy, collect_input_samples, MappedNetwork};
use crate::rng::{standard_normal, RngStream};
use crate::tile::AnalogTile;
use crate::train::{finetune, pretrain, EpochMetrics, TrainConfig};

pub const MINUTE: f64 = 60.0;
pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 86_400.0;
pub const MONTH: f64 = 30.0 * DAY;
pub const YEAR: f64 = 365.0 * DAY;

/// Default evaluation grid, seconds after programming.
pub fn default_time_grid() -> Vec<f64> {
    vec![20.0, MINUTE, HOUR, DAY, MONTH, YEAR]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvmErrorSettings {
    pub n_inputs: usize,
    /// Std of the normal weight distribution before clipping to [-1, 1].
    pub weight_std: f64,
    pub enable_ir_drop: bool,
    pub enable_quantization: bool,
}

impl Default for MvmErrorSettings {
    fn default() -> Self {
        Self {
            n_inputs: 5120,
            weight_std: 0.25,
            enable_ir_drop: true,
            enable_quantization: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvmErrorRow {
    pub time_seconds: f64,
    pub l2_error_percent: f64,
    pub seed: u64,
}

/// `‖a − b‖₂ / ‖b‖₂` over all elements.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Clipped normal unit weights and uniform inputs in [-1, 1].
pub fn mvm_workload(
    rows: usize,
    cols: usize,
    settings: &MvmErrorSettings,
    rng: RngStream,
) -> (Matrix, Matrix) {
    let mut gen = rng.derive(0).generator();
    let w = Matrix::from_fn(rows, cols, |_, _| {
        (settings.weight_std * standard_normal(&mut gen)).clamp(-1.0, 1.0)
    });
    let mut gen = rng.derive(1).generator();
    let x = Matrix::from_fn(settings.n_inputs, rows, |_, _| gen.random_range(-1.0..=1.0));
    (w, x)
}

/// Program one tile and measure the batch L2 error against the exact
/// product at each time (seconds after programming).
pub fn run_mvm_error(
    hardware: &TileHardwareConfig,
    noise: &NoiseModel,
    settings: &MvmErrorSettings,
    times: &[f64],
    seed: u64,
) -> Result<Vec<MvmErrorRow>> {
    if settings.n_inputs == 0 {
        return Err(AimcError::InvalidConfig("n_inputs must be >= 1".into()));
    }
    if times.is_empty() {
        return Err(AimcError::EmptyInput("no evaluation times".into()));
    }
    let root = RngStream::new(seed, 0);
    let (w, x) = mvm_workload(hardware.rows, hardware.cols, settings, root.derive(0));
    let mut ideal = Vec::with_capacity(settings.n_inputs * hardware.cols);
    for b in 0..x.rows() {
        ideal.extend(ideal_mvm(x.row(b), &w)?);
    }
    let mut tile = AnalogTile::from_unit_weights(&w, hardware, noise)?;
    tile.program(root.derive(1), 0.0)?;
    times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let mode = ForwardMode::inference(t)
                .with_ir_drop(settings.enable_ir_drop)
                .with_quantization(settings.enable_quantization);
            let y = tile_forward_batch(&tile, &x, &mode, root.derive(2).derive(k as u64))?;
            Ok(MvmErrorRow {
                time_seconds: t,
                l2_error_percent: 100.0 * relative_l2(y.as_slice(), &ideal),
                seed,
            })
        })
        .collect()
}

/// How a range (input or conductance) is obtained in an ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    /// Hardware default.
    None,
    /// Post-training calibration only.
    Pt,
    /// Learned during training.
    Learned,
    /// Learned, then calibrated.
    LearnedPt,
}

impl RangeMode {
    pub fn learned(self) -> bool {
        matches!(self, Self::Learned | Self::LearnedPt)
    }

    pub fn calibrated(self) -> bool {
        matches!(self, Self::Pt | Self::LearnedPt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Pt => "pt",
            Self::Learned => "learned",
            Self::LearnedPt => "learned-pt",
        }
    }
}

/// The 3 × 3 grid of {none, pt, learned} for both ranges, plus both ranges
/// learned and then calibrated.
pub fn ablation_grid() -> Vec<(RangeMode, RangeMode)> {
    use RangeMode::*;
    let mut rows = Vec::new();
    for input in [None, Pt, Learned] {
        for conductance in [None, Pt, Learned] {
            rows.push((input, conductance));
        }
    }
    rows.push((LearnedPt, LearnedPt));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    /// Layer widths, input first.
    pub dims: Vec<usize>,
    /// Square tile edge for the toy model.
    pub tile_size: usize,
    pub data: MoonsConfig,
    /// Evaluation times, seconds after programming.
    pub eval_times: Vec<f64>,
    /// Rows per calibration batch.
    pub calibration_batch_size: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            dims: vec![2, 64, 64, 2],
            tile_size: 32,
            data: MoonsConfig::default(),
            eval_times: vec![20.0, HOUR],
            calibration_batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub input: RangeMode,
    pub conductance: RangeMode,
    pub time_seconds: f64,
    /// Validation accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
}

impl AblationCell {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracies)
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        sample_std(&self.accuracies)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Train one toy model with the given range learning flags.
pub fn train_toy(
    settings: &AblationSettings,
    train_cfg: &TrainConfig,
    hardware: &TileHardwareConfig,
    learn_input: bool,
    learn_conductance: bool,
    seed: u64,
) -> Result<(MappedNetwork, Dataset, Dataset, Vec<EpochMetrics>)> {
    let root = RngStream::new(seed, 1);
    let (train, val) = moons_split(&settings.data, root.derive(0))?;
    let cfg = TrainConfig {
        learn_input_range: learn_input,
        learn_conductance_scale: learn_conductance,
        ..train_cfg.clone().matched_to(hardware)
    };
    let mut net = MappedNetwork::mlp(
        &settings.dims,
        settings.tile_size,
        settings.tile_size,
        cfg.initial_input_range,
        root.derive(1),
    )?;
    let mut metrics = pretrain(&mut net, &train, &val, &cfg, root.derive(2))?;
    metrics.extend(finetune(&mut net, &train, &val, &cfg, root.derive(3))?);
    Ok((net, train, val, metrics))
}

/// Hardware accuracy of a trained model with the requested calibrations, at
/// each time in `times`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_on_hardware(
    net: &MappedNetwork,
    train: &Dataset,
    val: &Dataset,
    hardware: &TileHardwareConfig,
    noise: &NoiseModel,
    calibration: &CalibrationConfig,
    calibration_batch_size: usize,
    pt_input: bool,
    pt_conductance: bool,
    times: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut analog = net.to_analog(hardware, noise)?;
    if pt_input || pt_conductance {
        let samples =
            collect_input_samples(net, train, calibration_batch_size, calibration.n_samples)?;
        if pt_input {
            analog.calibrate_input_ranges(&samples, calibration.percentile_k)?;
        }
        if pt_conductance {
            let tile_hw = TileHardwareConfig {
                rows: net.tile_rows,
                cols: net.tile_cols,
                ..hardware.clone()
            };
            analog.calibrate_conductance_ranges(&samples, &calibration.resolve(&tile_hw)?)?;
        }
    }
    let root = RngStream::new(seed, 2);
    analog.program(root.derive(0), 0.0)?;
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let y = analog.forward(
                &val.x,
                &ForwardMode::inference(t),
                root.derive(1).derive(k as u64),
            )?;
            Ok(accuracy(&y, &val.labels))
        })
        .collect()
}

/// Train and evaluate every ablation row for every seed.
pub fn run_ablation(
    hardware: &TileHardwareConfig,
    noise: &NoiseModel,
    calibration: &CalibrationConfig,
    train_cfg: &TrainConfig,
    settings: &AblationSettings,
    seeds: &[u64],
) -> Result<Vec<AblationCell>> {
    if seeds.is_empty() {
        return Err(AimcError::InvalidConfig(
            "at least one seed is needed".into(),
        ));
    }
    let grid = ablation_grid();
    // per seed: accuracy[row][time]
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<Vec<f64>>> {
            let mut trained = Vec::new();
            for (learn_in, learn_g) in [(false, false), (true, false), (false, true), (true, true)]
            {
                let t = train_toy(settings, train_cfg, hardware, learn_in, learn_g, seed).map_err(
                    |e| {
                        e.with_context(&format!(
                            "seed {seed}, learn_input={learn_in}, learn_conductance={learn_g}"
                        ))
                    },
                )?;
                trained.push(((learn_in, learn_g), t));
            }
            grid.iter()
                .map(|&(input, conductance)| {
                    let key = (input.learned(), conductance.learned());
                    let (_, (net, train, val, _)) =
                        trained.iter().find(|(k, _)| *k == key).expect("trained");
                    evaluate_on_hardware(
                        net,
                        train,
                        val,
                        hardware,
                        noise,
                        calibration,
                        settings.calibration_batch_size,
                        input.calibrated(),
                        conductance.calibrated(),
                        &settings.eval_times,
                        seed,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (r, &(input, conductance)) in grid.iter().enumerate() {
        for (k, &t) in settings.eval_times.iter().enumerate() {
            cells.push(AblationCell {
                input,
                conductance,
                time_seconds: t,
                accuracies: per_seed.iter().map(|s| s[r][k]).collect(),
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileCalibrationSettings {
    pub rows: usize,
    pub cols: usize,
    /// Fraction of cells drawn near full scale.
    pub strong_fraction: f64,
    /// Scale of the Laplace-distributed inputs.
    pub input_scale: f64,
    pub n_eval: usize,
    /// Rows per calibration batch.
    pub calibration_batch_size: usize,
}

impl Default for TileCalibrationSettings {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 64,
            strong_fraction: 0.3,
            input_scale: 0.3,
            n_eval: 512,
            calibration_batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCalibrationRow {
    pub method: String,
    pub time_seconds: f64,
    pub l2_error_percent: f64,
    pub seed: u64,
}

/// Saturation-heavy synthetic tile and heavy-tailed inputs.
pub fn saturating_workload(
    settings: &TileCalibrationSettings,
    n: usize,
    rng: RngStream,
) -> (Matrix, Matrix) {
    let mut gen = rng.derive(0).generator();
    let w = Matrix::from_fn(settings.rows, settings.cols, |_, _| {
        let sign = if gen.random_bool(0.5) { 1.0 } else { -1.0 };
        if gen.random_bool(settings.strong_fraction) {
            sign * gen.random_range(0.8..=1.0)
        } else {
            (0.1 * standard_normal(&mut gen)).clamp(-1.0, 1.0)
        }
    });
    let mut gen = rng.derive(1).generator();
    let x = Matrix::from_fn(n, settings.rows, |_, _| {
        // Laplace
        let u: f64 = gen.random_range(-0.5..0.5);
        -settings.input_scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    });
    (w, x)
}

/// MVM error of one tile without calibration, with each calibration alone,
/// and with both, at each time.
pub fn run_tile_calibration(
    hardware: &TileHardwareConfig,
    noise: &NoiseModel,
    calibration: &CalibrationConfig,
    settings: &TileCalibrationSettings,
    times: &[f64],
    seed: u64,
) -> Result<(Vec<TileCalibrationRow>, CalibrationReport)> {
    let hw = TileHardwareConfig {
        rows: settings.rows,
        cols: settings.cols,
        ..hardware.clone()
    };
    let root = RngStream::new(seed, 3);
    let n_cal = calibration.n_samples * settings.calibration_batch_size;
    let (w, x_cal) = saturating_workload(settings, n_cal, root.derive(0));
    let (_, x_eval) = saturating_workload(settings, settings.n_eval, root.derive(1));
    let mut ideal = Vec::with_capacity(settings.n_eval * settings.cols);
    for b in 0..x_eval.rows() {
        ideal.extend(ideal_mvm(x_eval.row(b), &w)?);
    }
    let base = AnalogTile::from_unit_weights(&w, &hw, noise)?;
    let cal = calibration.resolve(&hw)?;
    let mut rows = Vec::new();
    let mut report = CalibrationReport::default();
    for (method, pt_in, pt_g) in [
        ("none", false, false),
        ("input", true, false),
        ("conductance", false, true),
        ("both", true, true),
    ] {
        let mut tile = base.clone();
        if pt_in {
            tile.set_input_range(optimize_input_range(x_cal.as_slice(), cal.percentile_k)?)?;
        }
        if pt_g {
            let (t, columns) = optimize_conductance_ranges(&tile, &x_cal, &cal)?;
            tile = t;
            if pt_in {
                report.tiles.push(TileCalibration {
                    tile: 0,
                    input_range: tile.input_range,
                    columns,
                });
            }
        }
        tile.program(root.derive(2), 0.0)?;
        for (k, &t) in times.iter().enumerate() {
            let y = tile_forward_batch(
                &tile,
                &x_eval,
                &ForwardMode::inference(t),
                root.derive(3).derive(k as u64),
            )?;
            rows.push(TileCalibrationRow {
                method: method.into(),
                time_seconds: t,
                l2_error_percent: 100.0 * relative_l2(y.as_slice(), &ideal),
                seed,
            });
        }
    }
    Ok((rows, report))
}

/// Full-scale column current of a quarter of one cell at `g_max`; used by the
/// toy-model and single-tile calibration experiments.
pub const SATURATION_HEAVY_PES: f64 = 0.25;

pub fn saturation_heavy(hardware: &TileHardwareConfig) -> TileHardwareConfig {
    TileHardwareConfig {
        saturating_pes: SATURATION_HEAVY_PES,
        ..hardware.clone()
    }
}

/// Training defaults for the toy model: the digital input range starts at 2.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        initial_input_range: 2.0,
        ..TrainConfig::default()
    }
}
