// SPDX-License-Identifier: Apache-2.0
//! Post-training range calibration.
//!
//! Two procedures run per tile on input vectors captured from a digital
//! forward pass:
//!
//! * **Input range**: the DAC full scale becomes the `K`-th percentile of the
//!   magnitudes of every captured input element. Conductances are untouched.
//! * **Conductance range**: for each bitline the cap is reset to `G_max`,
//!   the distribution of column currents over the captured inputs gives a
//!   peak estimate `I_P = μ + L·σ`, and if `I_P` exceeds the ADC saturation
//!   current the cap shrinks to `max(G_max · I_S / I_P, G_min)`. The column's
//!   output scale absorbs the change, so the noiseless result is unchanged.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::TileHardwareConfig;
use crate::error::{AimcError, Result};
use crate::matrix::Matrix;
use crate::quant::UniformQuantizer;
use crate::rng::{standard_normal, RngStream};
use crate::tile::AnalogTile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Input batches captured per tile.
    pub n_samples: usize,
    /// Percentile `K` in (0, 100] for the input range.
    pub percentile_k: f64,
    /// Standard deviations `L` added to the mean current.
    pub n_std: f64,
    /// Smallest permitted column cap `G_min` (µS); `None` → `g_max / 4`.
    pub g_min_floor: Option<f64>,
    /// `None` → taken from the hardware config.
    pub i_sat: Option<f64>,
    pub v_read: Option<f64>,
    pub y_factor: Option<f64>,
    /// Draw `I_P = μ + L·N(0, σ)` instead of the deterministic `μ + L·σ`.
    pub sampled_peak: bool,
    pub peak_seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_samples: 2,
            percentile_k: 99.995,
            n_std: 2.0,
            g_min_floor: None,
            i_sat: None,
            v_read: None,
            y_factor: None,
            sampled_peak: false,
            peak_seed: 0,
        }
    }
}

/// Calibration parameters with hardware defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedCalibration {
    pub percentile_k: f64,
    pub n_std: f64,
    pub g_max: f64,
    pub g_min_floor: f64,
    pub i_sat: f64,
    pub v_read: f64,
    pub y_factor: f64,
    pub dac_bits: u32,
    pub sampled_peak: Option<RngStream>,
}

impl CalibrationConfig {
    pub fn resolve(&self, hw: &TileHardwareConfig) -> Result<ResolvedCalibration> {
        let bad = |m: String| Err(AimcError::InvalidConfig(m));
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        if !(self.percentile_k > 0.0 && self.percentile_k <= 100.0) {
            return bad(format!(
                "percentile_k {} outside (0, 100]",
                self.percentile_k
            ));
        }
        if !(self.n_std >= 0.0) {
            return bad("n_std must be >= 0".into());
        }
        let g_min_floor = self.g_min_floor.unwrap_or(hw.g_max / 4.0);
        if !(g_min_floor > 0.0 && g_min_floor <= hw.g_max) {
            return bad(format!("g_min_floor {g_min_floor} outside (0, g_max]"));
        }
        let r = ResolvedCalibration {
            percentile_k: self.percentile_k,
            n_std: self.n_std,
            g_max: hw.g_max,
            g_min_floor,
            i_sat: self.i_sat.unwrap_or(hw.i_sat()),
            v_read: self.v_read.unwrap_or(hw.v_read),
            y_factor: self.y_factor.unwrap_or(hw.y_factor()),
            dac_bits: hw.dac_bits,
            sampled_peak: self.sampled_peak.then(|| RngStream::new(self.peak_seed, 0)),
        };
        if !(r.i_sat > 0.0 && r.v_read > 0.0 && r.y_factor > 0.0) {
            return bad("i_sat, v_read and y_factor must be > 0".into());
        }
        Ok(r)
    }
}

/// Per-bitline outcome of conductance calibration. Currents in µA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: usize,
    /// Peak estimate with the cap reset to `g_max`.
    pub peak_before: f64,
    /// Peak estimate with the chosen cap.
    pub peak_after: f64,
    pub g_col_cap: f64,
    /// The estimate exceeded the saturation current before adjustment.
    pub saturating: bool,
    /// The cap was clamped at the floor.
    pub floored: bool,
    /// No non-zero input sample was available.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCalibration {
    pub tile: usize,
    pub input_range: f64,
    pub columns: Vec<ColumnReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tiles: Vec<TileCalibration>,
}

pub const REPORT_HEADER: &str =
    "tile,column,input_range,g_col_cap,peak_before_ua,peak_after_ua,saturating,floored,skipped";

impl CalibrationReport {
    /// One CSV record per (tile, column).
    pub fn to_csv_rows(&self) -> String {
        let mut s = String::new();
        for t in &self.tiles {
            for c in &t.columns {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    t.tile,
                    c.column,
                    t.input_range,
                    c.g_col_cap,
                    c.peak_before,
                    c.peak_after,
                    c.saturating as u8,
                    c.floored as u8,
                    c.skipped as u8
                );
            }
        }
        s
    }
}

/// Nearest-rank `k`-th percentile of `|samples|`.
pub fn optimize_input_range(samples: &[f64], k: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(AimcError::CalibrationData("no input samples".into()));
    }
    if !(k > 0.0 && k <= 100.0) {
        return Err(AimcError::InvalidConfig(format!(
            "percentile {k} outside (0, 100]"
        )));
    }
    let mut mags: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
    let n = mags.len();
    let rank = ((k / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let (_, v, _) = mags.select_nth_unstable_by(rank - 1, f64::total_cmp);
    let v = *v;
    if !(v > 0.0) || !v.is_finite() {
        return Err(AimcError::DegenerateRange(format!(
            "the {k}-th percentile of |X| is {v}; input range must be > 0"
        )));
    }
    Ok(v)
}

/// Per-column peak current estimates (µA) for the given conductances.
///
/// `inputs` are the DAC-normalized sample vectors that contain at least one
/// non-zero element. Each polarity is estimated separately from the
/// distribution of `|I|`; the larger estimate counts.
fn peak_currents(
    g_plus: &Matrix,
    g_minus: &Matrix,
    columns: &[usize],
    inputs: &Matrix,
    cal: &ResolvedCalibration,
) -> Vec<f64> {
    let n = inputs.rows() as f64;
    columns
        .iter()
        .map(|&j| {
            let mut peak = 0.0f64;
            for (pol, g) in [g_plus, g_minus].into_iter().enumerate() {
                let col = g.column(j);
                let currents: Vec<f64> = (0..inputs.rows())
                    .map(|s| {
                        let dot: f64 = inputs.row(s).iter().zip(&col).map(|(u, g)| u * g).sum();
                        (cal.v_read * dot * cal.y_factor).abs()
                    })
                    .collect();
                let mu = currents.iter().sum::<f64>() / n;
                let var = currents.iter().map(|i| (i - mu).powi(2)).sum::<f64>() / n;
                let sigma = var.sqrt();
                let spread = match cal.sampled_peak {
                    Some(stream) => {
                        let mut gen = stream.derive(j as u64 * 2 + pol as u64).generator();
                        sigma * standard_normal(&mut gen)
                    }
                    None => sigma,
                };
                peak = peak.max(mu + cal.n_std * spread);
            }
            // counts back to µA
            peak / cal.y_factor
        })
        .collect()
}

/// DAC-normalized inputs, dropping vectors without any non-zero element.
fn normalized_inputs(tile: &AnalogTile, samples: &Matrix, dac_bits: u32) -> Result<Matrix> {
    if samples.cols() != tile.rows() {
        return Err(AimcError::Shape(format!(
            "samples of length {} for a tile with {} rows",
            samples.cols(),
            tile.rows()
        )));
    }
    let dac = UniformQuantizer::new(tile.input_range, dac_bits)?;
    let mut kept = Vec::new();
    let mut rows = 0;
    for s in 0..samples.rows() {
        let u: Vec<f64> = samples
            .row(s)
            .iter()
            .map(|&x| dac.quantize(x) / tile.input_range)
            .collect();
        if u.iter().any(|&v| v != 0.0) {
            kept.extend(u);
            rows += 1;
        }
    }
    Matrix::from_vec(rows, tile.rows(), kept)
}

/// Conductance-range calibration of one tile.
pub fn optimize_conductance_ranges(
    tile: &AnalogTile,
    samples: &Matrix,
    cal: &ResolvedCalibration,
) -> Result<(AnalogTile, Vec<ColumnReport>)> {
    let mut out = tile.clone();
    let inputs = normalized_inputs(tile, samples, cal.dac_bits)?;
    let all: Vec<usize> = (0..tile.cols()).collect();
    for &j in &all {
        out.set_column_cap(j, cal.g_max)?;
    }
    if inputs.rows() == 0 {
        let reports = all
            .iter()
            .map(|&j| ColumnReport {
                column: j,
                peak_before: 0.0,
                peak_after: 0.0,
                g_col_cap: cal.g_max,
                saturating: false,
                floored: false,
                skipped: true,
            })
            .collect();
        return Ok((out, reports));
    }

    let before = peak_currents(&out.g_plus, &out.g_minus, &all, &inputs, cal);
    let mut reports = Vec::with_capacity(all.len());
    for &j in &all {
        let peak = before[j];
        let saturating = peak > cal.i_sat;
        let mut report = ColumnReport {
            column: j,
            peak_before: peak,
            peak_after: peak,
            g_col_cap: cal.g_max,
            saturating,
            floored: false,
            skipped: false,
        };
        if saturating {
            let target = cal.g_max * cal.i_sat / peak;
            let mut cap = target.max(cal.g_min_floor);
            report.floored = target <= cal.g_min_floor;
            out.set_column_cap(j, cap)?;
            let mut after = peak_currents(&out.g_plus, &out.g_minus, &[j], &inputs, cal)[0];
            // rounding can leave the rescaled estimate an ulp above I_S
            while !report.floored && after > cal.i_sat {
                cap *= 1.0 - 4.0 * f64::EPSILON;
                if cap <= cal.g_min_floor {
                    cap = cal.g_min_floor;
                    report.floored = true;
                }
                out.set_column_cap(j, cap)?;
                after = peak_currents(&out.g_plus, &out.g_minus, &[j], &inputs, cal)[0];
            }
            report.peak_after = after;
            report.g_col_cap = cap;
        }
        reports.push(report);
    }
    Ok((out, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoiseModel;
    use crate::forward::{tile_forward_batch, ForwardMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent nearest-rank oracle: full sort, 1-based rank ceil(k/100·n).
    fn sort_percentile(v: &[f64], k: f64) -> f64 {
        let mut s: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        let mut rank = (k * n as f64 / 100.0).ceil() as usize;
        rank = rank.max(1).min(n);
        s[rank - 1]
    }

    fn hw(rows: usize, cols: usize) -> TileHardwareConfig {
        TileHardwareConfig::with_size(rows, cols)
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(
            optimize_input_range(&[0.7, -0.7, 0.7, -0.7], 37.0).unwrap(),
            0.7
        );
        let v = [0.1, -3.0, 2.0, 0.5];
        assert_eq!(optimize_input_range(&v, 100.0).unwrap(), 3.0);
        let seq: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(
            optimize_input_range(&seq, 99.0).unwrap(),
            sort_percentile(&seq, 99.0)
        );
        assert_eq!(optimize_input_range(&seq, 99.0).unwrap(), 990.0);
    }

    #[test]
    fn percentile_errors() {
        assert!(matches!(
            optimize_input_range(&[0.0, 0.0], 50.0),
            Err(AimcError::DegenerateRange(_))
        ));
        assert!(matches!(
            optimize_input_range(&[], 50.0),
            Err(AimcError::CalibrationData(_))
        ));
        assert!(optimize_input_range(&[1.0], 0.0).is_err());
        assert!(optimize_input_range(&[1.0], 100.5).is_err());
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(
            v in prop::collection::vec(-1e3f64..1e3, 1..300),
            k in 0.001f64..=100.0,
        ) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let oracle = sort_percentile(&v, k);
            prop_assume!(oracle > 0.0);
            prop_assert_eq!(optimize_input_range(&v, k).unwrap(), oracle);
        }
    }

    #[test]
    fn zero_column_is_left_alone() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let tile = AnalogTile::from_unit_weights(&w, &hw(2, 2), &NoiseModel::default()).unwrap();
        let samples = Matrix::filled(4, 2, 1.0);
        let cal = CalibrationConfig::default()
            .resolve(&tile.hardware)
            .unwrap();
        let (out, rep) = optimize_conductance_ranges(&tile, &samples, &cal).unwrap();
        assert_eq!(rep[0].peak_before, 0.0);
        assert_eq!(rep[0].g_col_cap, 25.0);
        assert!(!rep[0].saturating);
        assert_eq!(out.g_plus.column(0), tile.g_plus.column(0));
    }

    #[test]
    fn single_cell_hand_computation() {
        // one cell at g_max, constant full-scale input, L = 0:
        // I_P = v_read · g_max · y_factor · 1; choose I_S = I_P / 2
        let w = Matrix::filled(1, 1, 1.0);
        let mut h = hw(1, 1);
        h.y_factor = Some(1.0);
        let tile = AnalogTile::from_unit_weights(&w, &h, &NoiseModel::default()).unwrap();
        let peak = 0.2 * 25.0;
        let cfg = CalibrationConfig {
            n_std: 0.0,
            i_sat: Some(peak / 2.0),
            g_min_floor: Some(1.0),
            ..CalibrationConfig::default()
        };
        let cal = cfg.resolve(&h).unwrap();
        let samples = Matrix::filled(3, 1, 1.0);
        let (out, rep) = optimize_conductance_ranges(&tile, &samples, &cal).unwrap();
        assert!((rep[0].peak_before - peak).abs() < 1e-12);
        assert!((rep[0].g_col_cap - 12.5).abs() < 1e-9);
        assert!(rep[0].peak_after <= cal.i_sat);
        assert!(rep[0].saturating && !rep[0].floored);
        assert!((out.g_plus.get(0, 0) - rep[0].g_col_cap).abs() < 1e-12);
    }

    fn saturating_tile(seed: u64) -> (AnalogTile, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(16, 6, |_, _| rng.random_range(-1.0..=1.0));
        let mut h = hw(16, 6);
        h.saturating_pes = 1.0;
        let tile = AnalogTile::from_unit_weights(&w, &h, &NoiseModel::default()).unwrap();
        let samples = Matrix::from_fn(20, 16, |_, _| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        (tile, samples)
    }

    #[test]
    fn cap_is_monotone_in_std_count() {
        let (tile, samples) = saturating_tile(3);
        let mut prev = vec![f64::INFINITY; tile.cols()];
        for l in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let cfg = CalibrationConfig {
                n_std: l,
                g_min_floor: Some(0.5),
                ..Default::default()
            };
            let cal = cfg.resolve(&tile.hardware).unwrap();
            let (_, rep) = optimize_conductance_ranges(&tile, &samples, &cal).unwrap();
            for (p, r) in prev.iter_mut().zip(&rep) {
                assert!(r.g_col_cap <= *p);
                *p = r.g_col_cap;
            }
        }
    }

    #[test]
    fn postconditions_idempotence_and_equivalence() {
        for seed in 0..20 {
            let (tile, samples) = saturating_tile(seed);
            let cal = CalibrationConfig::default()
                .resolve(&tile.hardware)
                .unwrap();
            let (once, rep) = optimize_conductance_ranges(&tile, &samples, &cal).unwrap();
            once.check_invariants().unwrap();
            for r in &rep {
                assert!(r.peak_after <= cal.i_sat || r.g_col_cap == cal.g_min_floor);
            }
            let (twice, rep2) = optimize_conductance_ranges(&once, &samples, &cal).unwrap();
            for (a, b) in rep.iter().zip(&rep2) {
                assert!((a.g_col_cap - b.g_col_cap).abs() <= 1e-12 * a.g_col_cap);
            }
            let xs = Matrix::from_fn(5, 16, |i, j| ((i * 16 + j) as f64).sin());
            let y0 = tile_forward_batch(&tile, &xs, &ForwardMode::ideal(), RngStream::new(0, 0))
                .unwrap();
            let y1 = tile_forward_batch(&twice, &xs, &ForwardMode::ideal(), RngStream::new(0, 0))
                .unwrap();
            for (a, b) in y0.as_slice().iter().zip(y1.as_slice()) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn all_zero_samples_skip_every_column() {
        let (tile, _) = saturating_tile(1);
        let cal = CalibrationConfig::default()
            .resolve(&tile.hardware)
            .unwrap();
        let (_, rep) = optimize_conductance_ranges(&tile, &Matrix::zeros(4, 16), &cal).unwrap();
        assert!(rep.iter().all(|r| r.skipped));
    }

    #[test]
    fn sampled_peak_variant_is_reproducible() {
        let (tile, samples) = saturating_tile(5);
        let cfg = CalibrationConfig {
            sampled_peak: true,
            peak_seed: 9,
            ..Default::default()
        };
        let cal = cfg.resolve(&tile.hardware).unwrap();
        let a = optimize_conductance_ranges(&tile, &samples, &cal)
            .unwrap()
            .1;
        let b = optimize_conductance_ranges(&tile, &samples, &cal)
            .unwrap()
            .1;
        assert_eq!(a, b);
    }
}
