// SPDX-License-Identifier: Apache-2.0
//! Symmetric uniform quantizers for the DAC (inputs) and ADC (bitline currents).
//!
//! Both converters use `2^bits − 1` levels spread uniformly over
//! `[−range, +range]`, so zero is a level and the end points are reproduced
//! exactly. Values beyond the range clip to it.

use crate::error::{AimcError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizer {
    range: f64,
    /// Number of non-zero levels on each side of zero, `2^(bits−1) − 1`.
    half_levels: f64,
}

impl UniformQuantizer {
    pub fn new(range: f64, bits: u32) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(AimcError::InvalidConfig(format!(
                "quantizer range must be finite and > 0, got {range}"
            )));
        }
        if bits == 0 || bits > 31 {
            return Err(AimcError::InvalidConfig(format!(
                "quantizer bit width must lie in 1..=31, got {bits}"
            )));
        }
        Ok(Self {
            range,
            half_levels: ((1u64 << (bits - 1)) - 1) as f64,
        })
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    /// Distance between adjacent levels; infinite for the single-level (1-bit) case.
    pub fn step(&self) -> f64 {
        if self.half_levels == 0.0 {
            f64::INFINITY
        } else {
            self.range / self.half_levels
        }
    }

    #[inline]
    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(-self.range, self.range)
    }

    #[inline]
    pub fn quantize(&self, v: f64) -> f64 {
        if self.half_levels == 0.0 {
            return 0.0;
        }
        let k = (self.clip(v) / self.range * self.half_levels).round();
        // k / half_levels is exactly ±1 at the end points
        self.range * (k / self.half_levels)
    }

    pub fn quantize_slice(&self, values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = self.quantize(*v));
    }
}

/// DAC: clip to `±input_range` and round to the nearest of `2^bits − 1` levels.
pub fn dac_quantize(x: &[f64], input_range: f64, bits: u32) -> Result<Vec<f64>> {
    let q = UniformQuantizer::new(input_range, bits)?;
    Ok(x.iter().map(|&v| q.quantize(v)).collect())
}

/// ADC: clip currents to `±i_sat` and round to the nearest of `2^bits − 1` levels,
/// returned in current units.
pub fn adc_quantize(currents: &[f64], i_sat: f64, bits: u32) -> Result<Vec<f64>> {
    let q = UniformQuantizer::new(i_sat, bits)?;
    Ok(currents.iter().map(|&v| q.quantize(v)).collect())
}
