// SPDX-License-Identifier: Apache-2.0
//! Hardware geometry and non-ideality parameters.

use serde::{Deserialize, Serialize};

use crate::error::{AimcError, Result};

/// Geometry, converter resolution and electrical constants of one crossbar tile.
///
/// Conductances are in µS, currents in µA, voltages in V and wire resistance in Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileHardwareConfig {
    pub rows: usize,
    pub cols: usize,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub g_max: f64,
    pub wire_resistance: f64,
    pub v_read: f64,
    /// ADC saturation current. `None` resolves to `saturating_pes · g_max · v_read`.
    pub i_sat: Option<f64>,
    /// Number of full-scale cells on one bitline that saturate the ADC.
    pub saturating_pes: f64,
    /// ADC counts per µA. `None` resolves to `(2^adc_bits − 2) / 2 / i_sat`.
    pub y_factor: Option<f64>,
}

impl Default for TileHardwareConfig {
    fn default() -> Self {
        Self {
            rows: 512,
            cols: 512,
            dac_bits: 8,
            adc_bits: 8,
            g_max: 25.0,
            wire_resistance: 0.35,
            v_read: 0.2,
            i_sat: None,
            saturating_pes: 10.0,
            y_factor: None,
        }
    }
}

impl TileHardwareConfig {
    pub fn with_size(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn i_sat(&self) -> f64 {
        self.i_sat
            .unwrap_or(self.saturating_pes * self.g_max * self.v_read)
    }

    pub fn y_factor(&self) -> f64 {
        self.y_factor
            .unwrap_or_else(|| ((1u64 << self.adc_bits) as f64 - 2.0) / 2.0 / self.i_sat())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AimcError::InvalidConfig(m.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("tile rows and cols must be >= 1");
        }
        if self.dac_bits == 0 || self.adc_bits == 0 || self.dac_bits > 31 || self.adc_bits > 31 {
            return bad("converter bit widths must lie in 1..=31");
        }
        if !(self.g_max > 0.0) {
            return bad("g_max must be > 0");
        }
        if !(self.v_read > 0.0) {
            return bad("v_read must be > 0");
        }
        if !(self.wire_resistance >= 0.0) {
            return bad("wire_resistance must be >= 0");
        }
        if !(self.i_sat() > 0.0) {
            return bad("i_sat must be > 0");
        }
        if !(self.y_factor() > 0.0) {
            return bad("y_factor must be > 0");
        }
        Ok(())
    }
}

/// Stochastic non-idealities. Stds are in µS unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Additive unit-weight noise (training forward).
    pub sigma_w: f64,
    /// Additive noise on the normalized DAC output.
    pub sigma_inp: f64,
    /// Additive output noise before the ADC, in units of `g_max · v_read` (training forward).
    pub sigma_out: f64,
    /// Programming-noise std polynomial `c0 + c1·G + c2·G²`.
    pub prog_coeffs: [f64; 3],
    /// Read-noise std `a + b·G`.
    pub read_coeffs: [f64; 2],
    pub drift_nu_mean: f64,
    pub drift_nu_std: f64,
    /// Reference time after programming, seconds.
    pub t0: f64,
    /// Rescale drifted outputs by a single per-tile factor measured against the
    /// programmed state.
    pub drift_compensation: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::pcm_like(25.0)
    }
}

impl NoiseModel {
    /// PCM-like defaults for a given `g_max`.
    pub fn pcm_like(g_max: f64) -> Self {
        Self {
            sigma_w: 0.06,
            sigma_inp: 0.0,
            sigma_out: 0.1,
            prog_coeffs: [0.26, 1.965 / g_max, 0.0],
            read_coeffs: [0.05, 0.01],
            drift_nu_mean: 0.06,
            drift_nu_std: 0.02,
            t0: 20.0,
            drift_compensation: true,
        }
    }

    /// Every stochastic effect switched off; drift exponent zero.
    pub fn noiseless() -> Self {
        Self {
            sigma_w: 0.0,
            sigma_inp: 0.0,
            sigma_out: 0.0,
            prog_coeffs: [0.0; 3],
            read_coeffs: [0.0; 2],
            drift_nu_mean: 0.0,
            drift_nu_std: 0.0,
            t0: 20.0,
            drift_compensation: false,
        }
    }

    #[inline]
    pub fn prog_std(&self, g: f64) -> f64 {
        let [c0, c1, c2] = self.prog_coeffs;
        c0 + c1 * g + c2 * g * g
    }

    #[inline]
    pub fn read_std(&self, g: f64) -> f64 {
        self.read_coeffs[0] + self.read_coeffs[1] * g
    }

    pub fn validate(&self, g_max: f64) -> Result<()> {
        let bad = |m: String| Err(AimcError::InvalidConfig(m));
        for (name, v) in [
            ("sigma_w", self.sigma_w),
            ("sigma_inp", self.sigma_inp),
            ("sigma_out", self.sigma_out),
            ("drift_nu_std", self.drift_nu_std),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if !(self.t0 > 0.0) {
            return bad("t0 must be > 0".into());
        }
        if !self.drift_nu_mean.is_finite() {
            return bad("drift_nu_mean must be finite".into());
        }
        // A quadratic on [0, g_max] attains its minimum at an end point or the vertex.
        let mut probes = vec![0.0, g_max];
        let [_, c1, c2] = self.prog_coeffs;
        if c2 != 0.0 {
            let vertex = -c1 / (2.0 * c2);
            if (0.0..=g_max).contains(&vertex) {
                probes.push(vertex);
            }
        }
        if probes.iter().any(|&g| !(self.prog_std(g) >= 0.0)) {
            return bad("programming-noise std is negative somewhere in [0, g_max]".into());
        }
        if !(self.read_std(0.0) >= 0.0 && self.read_std(g_max) >= 0.0) {
            return bad("read-noise std is negative somewhere in [0, g_max]".into());
        }
        Ok(())
    }
}
