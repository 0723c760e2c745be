// SPDX-License-Identifier: Apache-2.0
//! One crossbar instance with its digital periphery.

use serde::{Deserialize, Serialize};

use crate::config::{NoiseModel, TileHardwareConfig};
use crate::device::{apply_drift, program_conductances};
use crate::error::{AimcError, Result};
use crate::mapping::{decode_differential, encode_differential};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// Conductances actually written to the devices, plus the stream that fixes
/// their drift exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgrammedState {
    pub g_plus: Matrix,
    pub g_minus: Matrix,
    pub drift_stream: RngStream,
    /// Total target conductance, the reference for drift compensation.
    pub reference_conductance: f64,
}

/// A crossbar tile.
///
/// `g_plus`/`g_minus` are the *target* conductances (µS); writing them to the
/// devices through [`AnalogTile::program`] adds programming noise. The
/// periphery computes `y_j = out_scale_j · I_j + out_offset_j` from the
/// differential column current `I_j`. `out_scale` already folds in the
/// input range, the read voltage and the column cap, so with every
/// non-ideality disabled the tile reproduces `xᵀW` for the weights it was
/// built from.
///
/// A tile smaller than the physical array sits in the corner next to the
/// wordline drivers and bitline sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogTile {
    pub hardware: TileHardwareConfig,
    pub noise: NoiseModel,
    pub g_plus: Matrix,
    pub g_minus: Matrix,
    pub input_range: f64,
    pub out_scale: Vec<f64>,
    pub out_offset: Vec<f64>,
    pub g_col_cap: Vec<f64>,
    pub programmed_at: f64,
    pub programmed: Option<ProgrammedState>,
}

impl AnalogTile {
    /// Tile for unit weights (`|w| ≤ 1`) with every column cap at `g_max`.
    pub fn from_unit_weights(
        w_unit: &Matrix,
        hardware: &TileHardwareConfig,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let ones = vec![1.0; w_unit.cols()];
        Self::from_unit_weights_scaled(w_unit, &ones, hardware, noise)
    }

    /// Tile for unit weights whose columns carry a digital gain `column_gain`
    /// (the represented weight is `w_unit[i][j] · column_gain[j]`).
    pub fn from_unit_weights_scaled(
        w_unit: &Matrix,
        column_gain: &[f64],
        hardware: &TileHardwareConfig,
        noise: &NoiseModel,
    ) -> Result<Self> {
        hardware.validate()?;
        noise.validate(hardware.g_max)?;
        let (m, n) = w_unit.shape();
        if m == 0 || n == 0 || m > hardware.rows || n > hardware.cols {
            return Err(AimcError::Shape(format!(
                "{m}x{n} weights do not fit a {}x{} tile",
                hardware.rows, hardware.cols
            )));
        }
        if column_gain.len() != n {
            return Err(AimcError::Shape("column gain length".into()));
        }
        let caps = vec![hardware.g_max; n];
        let (g_plus, g_minus) = encode_differential(w_unit, &caps)?;
        let input_range = 1.0;
        let out_scale = column_gain
            .iter()
            .map(|&s| s * input_range / (hardware.v_read * hardware.g_max))
            .collect();
        Ok(Self {
            hardware: hardware.clone(),
            noise: noise.clone(),
            g_plus,
            g_minus,
            input_range,
            out_scale,
            out_offset: vec![0.0; n],
            g_col_cap: caps,
            programmed_at: 0.0,
            programmed: None,
        })
    }

    /// Tile for arbitrary real weights; each column is normalized by its
    /// largest magnitude and the factor moves into `out_scale`.
    pub fn from_weights(
        w: &Matrix,
        hardware: &TileHardwareConfig,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let gains: Vec<f64> = (0..w.cols())
            .map(|j| {
                let m = w.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            })
            .collect();
        let unit = Matrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j) / gains[j]);
        Self::from_unit_weights_scaled(&unit, &gains, hardware, noise)
    }

    pub fn rows(&self) -> usize {
        self.g_plus.rows()
    }

    pub fn cols(&self) -> usize {
        self.g_plus.cols()
    }

    /// Unit weights currently encoded by the target conductances.
    pub fn unit_weights(&self) -> Result<Matrix> {
        decode_differential(&self.g_plus, &self.g_minus, &self.g_col_cap)
    }

    /// The real weights the tile represents: `out_scale · v_read / input_range · (G+ − G−)`.
    pub fn effective_weights(&self) -> Matrix {
        let k = self.hardware.v_read / self.input_range;
        Matrix::from_fn(self.rows(), self.cols(), |i, j| {
            self.out_scale[j] * k * (self.g_plus.get(i, j) - self.g_minus.get(i, j))
        })
    }

    /// Change the DAC full scale, compensating `out_scale` so the noiseless
    /// result is unchanged. Conductances are not touched.
    pub fn set_input_range(&mut self, input_range: f64) -> Result<()> {
        if !(input_range > 0.0) || !input_range.is_finite() {
            return Err(AimcError::DegenerateRange(format!(
                "input range must be finite and > 0, got {input_range}"
            )));
        }
        let ratio = input_range / self.input_range;
        self.out_scale.iter_mut().for_each(|s| *s *= ratio);
        self.input_range = input_range;
        Ok(())
    }

    /// Rescale column `j` to a new cap, compensating `out_scale`.
    ///
    /// Changes target conductances, so any programmed state is dropped.
    pub fn set_column_cap(&mut self, j: usize, cap: f64) -> Result<()> {
        if !(cap > 0.0 && cap <= self.hardware.g_max) {
            return Err(AimcError::InvalidConfig(format!(
                "column cap {cap} outside (0, {}]",
                self.hardware.g_max
            )));
        }
        let old = self.g_col_cap[j];
        if cap == old {
            return Ok(());
        }
        let ratio = cap / old;
        for g in [&mut self.g_plus, &mut self.g_minus] {
            for i in 0..g.rows() {
                let v = (g.get(i, j) * ratio).min(cap);
                g.set(i, j, v);
            }
        }
        self.out_scale[j] /= ratio;
        self.g_col_cap[j] = cap;
        self.programmed = None;
        Ok(())
    }

    /// Write the target conductances to the devices at time `at`.
    ///
    /// `rng` fixes both the programming error and the per-cell drift
    /// exponents of this programming event.
    pub fn program(&mut self, rng: RngStream, at: f64) -> Result<()> {
        let g_max = self.hardware.g_max;
        let g_plus = program_conductances(&self.g_plus, &self.noise, g_max, rng.derive(0))?;
        let g_minus = program_conductances(&self.g_minus, &self.noise, g_max, rng.derive(1))?;
        let reference_conductance = self.g_plus.sum() + self.g_minus.sum();
        self.programmed = Some(ProgrammedState {
            g_plus,
            g_minus,
            drift_stream: rng.derive(2),
            reference_conductance,
        });
        self.programmed_at = at;
        Ok(())
    }

    /// Drifted conductances `(G+, G−)` at absolute time `t`, and the global
    /// drift-compensation factor (1 when disabled).
    pub fn drifted(&self, t: f64) -> Result<(Matrix, Matrix, f64)> {
        let state = self
            .programmed
            .as_ref()
            .ok_or_else(|| AimcError::NotProgrammed("inference needs a programmed tile".into()))?;
        let plus = apply_drift(
            &state.g_plus,
            t,
            self.programmed_at,
            &self.noise,
            state.drift_stream.derive(0),
        )?;
        let minus = apply_drift(
            &state.g_minus,
            t,
            self.programmed_at,
            &self.noise,
            state.drift_stream.derive(1),
        )?;
        let mut factor = 1.0;
        if self.noise.drift_compensation {
            let now = plus.sum() + minus.sum();
            if now > 0.0 && state.reference_conductance > 0.0 {
                factor = state.reference_conductance / now;
            }
        }
        Ok((plus, minus, factor))
    }

    /// Check the structural invariants of the target grids.
    pub fn check_invariants(&self) -> Result<()> {
        let (m, n) = self.g_plus.shape();
        if self.g_minus.shape() != (m, n)
            || self.g_col_cap.len() != n
            || self.out_scale.len() != n
            || self.out_offset.len() != n
        {
            return Err(AimcError::Shape(
                "tile periphery does not match grid".into(),
            ));
        }
        if !(self.input_range > 0.0) {
            return Err(AimcError::DegenerateRange("input range <= 0".into()));
        }
        let tol = 1e-12 * self.hardware.g_max;
        for j in 0..n {
            let cap = self.g_col_cap[j];
            if !(cap > 0.0 && cap <= self.hardware.g_max) {
                return Err(AimcError::InvalidConfig(format!("column {j} cap {cap}")));
            }
            for i in 0..m {
                let (p, q) = (self.g_plus.get(i, j), self.g_minus.get(i, j));
                if p < 0.0 || q < 0.0 || p > cap + tol || q > cap + tol {
                    return Err(AimcError::MappingDomain(format!(
                        "cell ({i},{j}) exceeds its cap"
                    )));
                }
                if p != 0.0 && q != 0.0 {
                    return Err(AimcError::MappingDomain(format!(
                        "cell ({i},{j}) has both polarities set"
                    )));
                }
            }
        }
        Ok(())
    }
}
