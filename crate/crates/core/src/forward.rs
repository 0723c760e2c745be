// SPDX-License-Identifier: Apache-2.0
//! The tile forward pass:
//!
//! `y = α_out ⊙ f_adc(Σ_i (G+ − G−)_ij · v_read · (f_dac(x_i)/X_r + σ_inp ξ)) + β`
//!
//! Inference applies drift, then read noise, then (optionally) IR drop, then
//! the ADC separately on the positive and negative arrays. Training replaces
//! the device path with additive unit-weight noise and output noise.

use serde::{Deserialize, Serialize};

use crate::config::TileHardwareConfig;
use crate::device::read_noise;
use crate::error::{shape_err, AimcError, Result};
use crate::ir_drop::IrDropSolver;
use crate::matrix::Matrix;
use crate::quant::UniformQuantizer;
use crate::rng::{standard_normal, RngStream};
use crate::tile::AnalogTile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Ideal,
    Inference,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardMode {
    pub kind: ModeKind,
    /// Absolute evaluation time in seconds; Inference only.
    pub at_time: Option<f64>,
    pub enable_ir_drop: bool,
    pub enable_quantization: bool,
}

impl ForwardMode {
    pub fn ideal() -> Self {
        Self {
            kind: ModeKind::Ideal,
            at_time: None,
            enable_ir_drop: false,
            enable_quantization: false,
        }
    }

    /// Full hardware model at time `t`.
    pub fn inference(t: f64) -> Self {
        Self {
            kind: ModeKind::Inference,
            at_time: Some(t),
            enable_ir_drop: true,
            enable_quantization: true,
        }
    }

    pub fn training(enable_quantization: bool) -> Self {
        Self {
            kind: ModeKind::Training,
            at_time: None,
            enable_ir_drop: false,
            enable_quantization,
        }
    }

    pub fn with_ir_drop(mut self, on: bool) -> Self {
        self.enable_ir_drop = on;
        self
    }

    pub fn with_quantization(mut self, on: bool) -> Self {
        self.enable_quantization = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.at_time) {
            (ModeKind::Inference, None) => Err(AimcError::InvalidConfig(
                "inference mode needs an evaluation time".into(),
            )),
            (ModeKind::Training | ModeKind::Ideal, Some(_)) => Err(AimcError::InvalidConfig(
                format!("{:?} mode does not take an evaluation time", self.kind),
            )),
            (ModeKind::Training, _) if self.enable_ir_drop => Err(AimcError::InvalidConfig(
                "training mode does not model IR drop".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Global gain correction measured with every wordline at `v_read`: the
/// readout the target conductances would give on ideal wires over the
/// readout of the drifted arrays through the resistive network.
fn ir_compensation_factor(tile: &AnalogTile, plus: &Matrix, minus: &Matrix) -> Result<f64> {
    let hw = &tile.hardware;
    let drive = vec![hw.v_read; tile.rows()];
    let reference = hw.v_read * (tile.g_plus.sum() + tile.g_minus.sum());
    let mut now = 0.0;
    for g in [plus, minus] {
        now += IrDropSolver::new(g, hw.wire_resistance)?
            .solve(&drive)?
            .iter()
            .sum::<f64>();
    }
    Ok(if now > 0.0 && reference > 0.0 {
        reference / now
    } else {
        1.0
    })
}

/// Saturation current: `saturating_pes` full-scale cells (10 by default)
/// driven at full input.
pub fn saturation_current(config: &TileHardwareConfig) -> f64 {
    config.saturating_pes * config.g_max * config.v_read
}

/// Exact floating-point reference `y_n = Σ_i x_i · w[i][n]`.
pub fn ideal_mvm(x: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(shape_err(format!(
            "vector of {} against {}x{} matrix",
            x.len(),
            w.rows(),
            w.cols()
        )));
    }
    let mut y = vec![0.0; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for (yn, &wn) in y.iter_mut().zip(w.row(i)) {
            *yn += xi * wn;
        }
    }
    Ok(y)
}

/// Intermediate results of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Column currents after the ADC, positive array (or the combined
    /// current outside Inference mode). µA, batch × cols.
    pub adc_plus: Matrix,
    /// Negative-array currents after the ADC; zero outside Inference mode.
    pub adc_minus: Matrix,
    /// Digital drift-compensation factor applied to the outputs.
    pub drift_factor: f64,
    pub output: Matrix,
}

pub fn tile_forward(
    tile: &AnalogTile,
    x: &[f64],
    mode: &ForwardMode,
    rng: RngStream,
) -> Result<Vec<f64>> {
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(tile_forward_batch(tile, &xs, mode, rng)?.into_vec())
}

/// Forward a batch (batch × rows) through the tile.
///
/// Stochastic device state (read noise, training weight noise) is drawn
/// once per call and shared by the whole batch; input and output noise are
/// drawn per element.
pub fn tile_forward_batch(
    tile: &AnalogTile,
    xs: &Matrix,
    mode: &ForwardMode,
    rng: RngStream,
) -> Result<Matrix> {
    Ok(tile_forward_traced(tile, xs, mode, rng)?.output)
}

pub fn tile_forward_traced(
    tile: &AnalogTile,
    xs: &Matrix,
    mode: &ForwardMode,
    rng: RngStream,
) -> Result<ForwardTrace> {
    mode.validate()?;
    if xs.cols() != tile.rows() {
        return Err(shape_err(format!(
            "inputs of length {} for a tile with {} rows",
            xs.cols(),
            tile.rows()
        )));
    }
    let hw = &tile.hardware;
    let noise = &tile.noise;
    let noisy = mode.kind != ModeKind::Ideal;
    let quantize = noisy && mode.enable_quantization;
    let x_r = tile.input_range;
    let (batch, cols) = (xs.rows(), tile.cols());

    // wordline voltages
    let dac = UniformQuantizer::new(x_r, hw.dac_bits)?;
    let mut volts = xs.map(|x| if quantize { dac.quantize(x) } else { x } / x_r);
    if noisy && noise.sigma_inp > 0.0 {
        let mut gen = rng.derive(2).generator();
        for u in volts.as_mut_slice() {
            *u += noise.sigma_inp * standard_normal(&mut gen);
        }
    }
    volts
        .as_mut_slice()
        .iter_mut()
        .for_each(|u| *u *= hw.v_read);

    let adc = UniformQuantizer::new(hw.i_sat(), hw.adc_bits)?;
    let matmul = |g: &Matrix| -> Matrix {
        let mut out = Matrix::zeros(batch, cols);
        for b in 0..batch {
            g.vec_mul_into(volts.row(b), out.row_mut(b));
        }
        out
    };

    let (adc_plus, adc_minus, drift_factor) = match mode.kind {
        ModeKind::Ideal => {
            let diff = tile.g_plus.zip_map(&tile.g_minus, |p, m| p - m)?;
            (matmul(&diff), Matrix::zeros(batch, cols), 1.0)
        }
        ModeKind::Training => {
            let mut gen = rng.derive(3).generator();
            let weights = Matrix::from_fn(tile.rows(), cols, |i, j| {
                let w = (tile.g_plus.get(i, j) - tile.g_minus.get(i, j)) / tile.g_col_cap[j];
                let w = if noise.sigma_w > 0.0 {
                    w + noise.sigma_w * standard_normal(&mut gen)
                } else {
                    w
                };
                w * tile.g_col_cap[j]
            });
            let mut currents = matmul(&weights);
            if noise.sigma_out > 0.0 {
                let scale = noise.sigma_out * hw.g_max * hw.v_read;
                let mut gen = rng.derive(4).generator();
                for c in currents.as_mut_slice() {
                    *c += scale * standard_normal(&mut gen);
                }
            }
            if quantize {
                adc.quantize_slice(currents.as_mut_slice());
            }
            (currents, Matrix::zeros(batch, cols), 1.0)
        }
        ModeKind::Inference => {
            let t = mode.at_time.expect("validated");
            let (plus, minus, mut factor) = tile.drifted(t)?;
            if noise.drift_compensation && mode.enable_ir_drop && hw.wire_resistance > 0.0 {
                factor = ir_compensation_factor(tile, &plus, &minus)?;
            }
            let plus = read_noise(&plus, noise, rng.derive(0));
            let minus = read_noise(&minus, noise, rng.derive(1));
            let solve = |g: &Matrix| -> Result<Matrix> {
                let mut i = if mode.enable_ir_drop && hw.wire_resistance > 0.0 {
                    IrDropSolver::new(g, hw.wire_resistance)?.solve_batch(&volts)?
                } else {
                    matmul(g)
                };
                if quantize {
                    adc.quantize_slice(i.as_mut_slice());
                }
                Ok(i)
            };
            (solve(&plus)?, solve(&minus)?, factor)
        }
    };

    let mut output = Matrix::zeros(batch, cols);
    for b in 0..batch {
        let (p, m) = (adc_plus.row(b), adc_minus.row(b));
        for (j, y) in output.row_mut(b).iter_mut().enumerate() {
            *y = drift_factor * tile.out_scale[j] * (p[j] - m[j]) + tile.out_offset[j];
        }
    }
    Ok(ForwardTrace {
        adc_plus,
        adc_minus,
        drift_factor,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoiseModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..=1.0))
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn ideal_mvm_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(ideal_mvm(&[1.0, 2.0], &w).unwrap(), vec![1.0, 6.0]);
        assert_eq!(ideal_mvm(&[0.0, 0.0], &w).unwrap(), vec![0.0, 0.0]);
        assert_eq!(ideal_mvm(&[0.0, 1.0], &w).unwrap(), w.row(1).to_vec());
        assert!(ideal_mvm(&[1.0], &w).is_err());
    }

    #[test]
    fn saturation_current_examples() {
        let mut hw = TileHardwareConfig::default();
        assert!((saturation_current(&hw) - 50.0).abs() < 1e-12);
        hw.v_read *= 2.0;
        assert!((saturation_current(&hw) - 100.0).abs() < 1e-12);
        hw.g_max = 0.0;
        assert_eq!(saturation_current(&hw), 0.0);
    }

    #[test]
    fn ideal_mode_reproduces_mvm() {
        let w = random_unit(16, 8, 1);
        let tile = AnalogTile::from_unit_weights(
            &w,
            &TileHardwareConfig::with_size(16, 8),
            &NoiseModel::default(),
        )
        .unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 4.0).collect();
        let y = tile_forward(&tile, &x, &ForwardMode::ideal(), RngStream::new(0, 0)).unwrap();
        assert!(rel(&y, &ideal_mvm(&x, &w).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_noise_training_collapses_to_ideal() {
        let w = random_unit(12, 5, 2);
        let mut noise = NoiseModel::default();
        noise.sigma_w = 0.0;
        noise.sigma_out = 0.0;
        let tile = AnalogTile::from_unit_weights(&w, &TileHardwareConfig::with_size(12, 5), &noise)
            .unwrap();
        let x = vec![0.3; 12];
        let a = tile_forward(
            &tile,
            &x,
            &ForwardMode::training(false),
            RngStream::new(3, 3),
        )
        .unwrap();
        let b = tile_forward(&tile, &x, &ForwardMode::ideal(), RngStream::new(3, 3)).unwrap();
        assert!(rel(&a, &b) < 1e-12);
    }

    #[test]
    fn zero_noise_inference_collapses_to_ideal() {
        let w = random_unit(10, 6, 3);
        let mut hw = TileHardwareConfig::with_size(10, 6);
        hw.wire_resistance = 0.0;
        let mut tile = AnalogTile::from_unit_weights(&w, &hw, &NoiseModel::noiseless()).unwrap();
        tile.out_offset = vec![0.5; 6];
        tile.program(RngStream::new(1, 1), 0.0).unwrap();
        let x = vec![-0.7; 10];
        let mode = ForwardMode::inference(1e5)
            .with_quantization(false)
            .with_ir_drop(false);
        let a = tile_forward(&tile, &x, &mode, RngStream::new(3, 3)).unwrap();
        let b = tile_forward(&tile, &x, &ForwardMode::ideal(), RngStream::new(3, 3)).unwrap();
        assert!(rel(&a, &b) < 1e-12);
    }

    #[test]
    fn mode_validation() {
        let mut m = ForwardMode::training(true);
        m.at_time = Some(10.0);
        assert!(matches!(m.validate(), Err(AimcError::InvalidConfig(_))));
        let mut m = ForwardMode::inference(1.0);
        m.at_time = None;
        assert!(m.validate().is_err());
        let w = random_unit(4, 4, 0);
        let tile = AnalogTile::from_unit_weights(
            &w,
            &TileHardwareConfig::with_size(4, 4),
            &NoiseModel::default(),
        )
        .unwrap();
        assert!(tile_forward(
            &tile,
            &[0.0; 3],
            &ForwardMode::ideal(),
            RngStream::new(0, 0)
        )
        .is_err());
        assert!(matches!(
            tile_forward(
                &tile,
                &[0.0; 4],
                &ForwardMode::inference(100.0),
                RngStream::new(0, 0)
            ),
            Err(AimcError::NotProgrammed(_))
        ));
    }

    #[test]
    fn adc_stage_is_bounded() {
        let w = Matrix::filled(32, 4, 1.0);
        let mut hw = TileHardwareConfig::with_size(32, 4);
        hw.saturating_pes = 2.0;
        let mut tile = AnalogTile::from_unit_weights(&w, &hw, &NoiseModel::default()).unwrap();
        tile.program(RngStream::new(4, 4), 0.0).unwrap();
        let xs = Matrix::filled(3, 32, 1.0);
        let tr = tile_forward_traced(
            &tile,
            &xs,
            &ForwardMode::inference(20.0),
            RngStream::new(5, 5),
        )
        .unwrap();
        let i_sat = hw.i_sat();
        assert!(tr
            .adc_plus
            .as_slice()
            .iter()
            .chain(tr.adc_minus.as_slice())
            .all(|c| c.abs() <= i_sat));
        assert!(tr.adc_plus.as_slice().iter().any(|&c| c == i_sat));
    }

    #[test]
    fn forward_is_deterministic() {
        let w = random_unit(8, 8, 9);
        let mut tile = AnalogTile::from_unit_weights(
            &w,
            &TileHardwareConfig::with_size(8, 8),
            &NoiseModel::default(),
        )
        .unwrap();
        tile.program(RngStream::new(8, 0), 0.0).unwrap();
        let x = vec![0.25; 8];
        let m = ForwardMode::inference(3600.0).with_quantization(false);
        let a = tile_forward(&tile, &x, &m, RngStream::new(1, 9)).unwrap();
        let b = tile_forward(&tile, &x, &m, RngStream::new(1, 9)).unwrap();
        assert_eq!(a, b);
        let c = tile_forward(&tile, &x, &m, RngStream::new(1, 10)).unwrap();
        assert_ne!(a, c);
    }
}
