// SPDX-License-Identifier: Apache-2.0
//! Small fully-connected networks mapped onto tiles.
//!
//! A [`MappedNetwork`] holds the trainable digital description: unit weights,
//! biases, and per tile an input range and per-column conductance scales.
//! [`AnalogNetwork`] is its hardware instance, one [`AnalogTile`] per
//! assignment, with biases and activations computed digitally.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    optimize_conductance_ranges, optimize_input_range, CalibrationReport, ResolvedCalibration,
    TileCalibration,
};
use crate::config::{NoiseModel, TileHardwareConfig};
use crate::dataset::Dataset;
use crate::error::{AimcError, Result};
use crate::forward::{tile_forward_batch, ForwardMode};
use crate::mapping::{map_layer, LayerShape, TileAssignment};
use crate::matrix::Matrix;
use crate::rng::RngStream;
use crate::tile::AnalogTile;

/// Smallest permitted channel scale.
pub const MIN_SCALE: f64 = 1e-3;

/// Learnable per-bitline scales `η ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScales {
    pub eta: Vec<f64>,
}

impl ChannelScales {
    pub fn ones(n: usize) -> Self {
        Self { eta: vec![1.0; n] }
    }

    /// Clamp every entry back into `[MIN_SCALE, 1]`.
    pub fn project(&mut self) {
        for e in &mut self.eta {
            *e = if e.is_nan() {
                1.0
            } else {
                e.clamp(MIN_SCALE, 1.0)
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedLayer {
    pub name: String,
    /// in × out, entries in [-1, 1].
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub relu: bool,
    pub tiles: Vec<TileAssignment>,
    /// DAC full scale per tile.
    pub input_ranges: Vec<f64>,
    pub scales: Vec<ChannelScales>,
}

impl MappedLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Weight block of tile `t`.
    pub fn tile_weights(&self, t: usize) -> Matrix {
        let a = &self.tiles[t];
        self.weights.block(
            a.row_span.start,
            a.col_span.start,
            a.row_span.len,
            a.col_span.len,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedNetwork {
    pub layers: Vec<MappedLayer>,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

/// Columns `span` of `x` as a new matrix.
pub(crate) fn column_block(x: &Matrix, start: usize, len: usize) -> Matrix {
    x.block(0, start, x.rows(), len)
}

impl MappedNetwork {
    /// ReLU MLP with layer widths `dims` (input first), uniform Glorot
    /// initialization clipped to [-1, 1], every input range set to
    /// `input_range`.
    pub fn mlp(
        dims: &[usize],
        tile_rows: usize,
        tile_cols: usize,
        input_range: f64,
        rng: RngStream,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(AimcError::InvalidConfig(format!(
                "bad layer widths {dims:?}"
            )));
        }
        if tile_rows == 0 || tile_cols == 0 {
            return Err(AimcError::InvalidConfig("tile size must be >= 1".into()));
        }
        if !(input_range > 0.0) {
            return Err(AimcError::InvalidConfig("input range must be > 0".into()));
        }
        let mut gen = rng.generator();
        let mut layers = Vec::new();
        let mut next_index = 0;
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt().min(1.0);
            let weights = Matrix::from_fn(fan_in, fan_out, |_, _| gen.random_range(-limit..=limit));
            let shape = LayerShape::linear(format!("fc{}", l + 1), fan_in, fan_out);
            let tiles = map_layer(&shape, tile_rows, tile_cols, next_index);
            next_index += tiles.len();
            layers.push(MappedLayer {
                name: shape.name.clone(),
                weights,
                bias: vec![0.0; fan_out],
                relu: l + 2 < dims.len(),
                input_ranges: vec![input_range; tiles.len()],
                scales: tiles
                    .iter()
                    .map(|t| ChannelScales::ones(t.col_span.len))
                    .collect(),
                tiles,
            });
        }
        Ok(Self {
            layers,
            tile_rows,
            tile_cols,
        })
    }

    pub fn num_tiles(&self) -> usize {
        self.layers.iter().map(|l| l.tiles.len()).sum()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Noise-free floating-point forward; channel scales apply, ranges do not.
    /// Returns the input of every layer followed by the network output.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.cols() != self.in_dim() {
            return Err(AimcError::Shape(format!(
                "{} features for a network expecting {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut acts = vec![x.clone()];
        for layer in &self.layers {
            let input = acts.last().expect("non-empty");
            let mut out = Matrix::zeros(input.rows(), layer.out_dim());
            for (t, a) in layer.tiles.iter().enumerate() {
                let w = layer.tile_weights(t);
                let xs = column_block(input, a.row_span.start, a.row_span.len);
                let eta = &layer.scales[t].eta;
                let mut y = vec![0.0; a.col_span.len];
                for b in 0..input.rows() {
                    w.vec_mul_into(xs.row(b), &mut y);
                    let row = out.row_mut(b);
                    for (j, v) in y.iter().enumerate() {
                        row[a.col_span.start + j] += eta[j] * v;
                    }
                }
            }
            finish_layer(&mut out, &layer.bias, layer.relu);
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.pop().expect("non-empty"))
    }

    /// Hardware instance with the stored ranges and scales: each tile's
    /// column cap is `η · g_max` and the represented function is unchanged.
    pub fn to_analog(
        &self,
        hardware: &TileHardwareConfig,
        noise: &NoiseModel,
    ) -> Result<AnalogNetwork> {
        let hw = TileHardwareConfig {
            rows: self.tile_rows,
            cols: self.tile_cols,
            ..hardware.clone()
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut tiles = Vec::with_capacity(layer.tiles.len());
            for (t, a) in layer.tiles.iter().enumerate() {
                let mut tile = AnalogTile::from_unit_weights(&layer.tile_weights(t), &hw, noise)?;
                tile.set_input_range(layer.input_ranges[t])?;
                for (j, &eta) in layer.scales[t].eta.iter().enumerate() {
                    tile.set_column_cap(j, eta * hw.g_max)?;
                    tile.out_scale[j] *= eta;
                }
                tiles.push((a.clone(), tile));
            }
            layers.push(AnalogLayer {
                name: layer.name.clone(),
                tiles,
                bias: layer.bias.clone(),
                relu: layer.relu,
                in_dim: layer.in_dim(),
                out_dim: layer.out_dim(),
            });
        }
        Ok(AnalogNetwork { layers })
    }
}

fn finish_layer(out: &mut Matrix, bias: &[f64], relu: bool) {
    for b in 0..out.rows() {
        for (v, &c) in out.row_mut(b).iter_mut().zip(bias) {
            *v += c;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Pre-DAC input vectors seen by every tile, indexed `[layer][tile]`, one
/// row per vector.
pub type TileSamples = Vec<Vec<Matrix>>;

/// Record what every tile receives during noise-free forward passes over
/// the first `n` batches of `data`.
pub fn collect_input_samples(
    network: &MappedNetwork,
    data: &Dataset,
    batch_size: usize,
    n: usize,
) -> Result<TileSamples> {
    if n == 0 {
        return Err(AimcError::InvalidConfig("n_samples must be >= 1".into()));
    }
    let batches: Vec<Dataset> = data.batches(batch_size).take(n).collect();
    if batches.is_empty() {
        return Err(AimcError::CalibrationData("empty data source".into()));
    }
    if batches.len() < n {
        return Err(AimcError::CalibrationData(format!(
            "{n} batches requested, data yields {}",
            batches.len()
        )));
    }
    let mut per_layer: Vec<Vec<Vec<f64>>> = network
        .layers
        .iter()
        .map(|l| vec![Vec::new(); l.tiles.len()])
        .collect();
    let mut count = 0;
    for batch in &batches {
        let acts = network.forward_trace(&batch.x)?;
        for (l, layer) in network.layers.iter().enumerate() {
            for (t, a) in layer.tiles.iter().enumerate() {
                for b in 0..acts[l].rows() {
                    per_layer[l][t].extend_from_slice(&acts[l].row(b)[a.row_span.range()]);
                }
            }
        }
        count += batch.len();
    }
    network
        .layers
        .iter()
        .zip(per_layer)
        .map(|(layer, tiles)| {
            layer
                .tiles
                .iter()
                .zip(tiles)
                .map(|(a, v)| Matrix::from_vec(count, a.row_span.len, v))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AnalogLayer {
    pub name: String,
    pub tiles: Vec<(TileAssignment, AnalogTile)>,
    pub bias: Vec<f64>,
    pub relu: bool,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct AnalogNetwork {
    pub layers: Vec<AnalogLayer>,
}

impl AnalogNetwork {
    fn check_samples(&self, samples: &TileSamples) -> Result<()> {
        let ok = samples.len() == self.layers.len()
            && samples
                .iter()
                .zip(&self.layers)
                .all(|(s, l)| s.len() == l.tiles.len());
        if ok {
            Ok(())
        } else {
            Err(AimcError::Shape(
                "sample sets do not match the tile layout".into(),
            ))
        }
    }

    /// Input-range calibration of every tile.
    pub fn calibrate_input_ranges(&mut self, samples: &TileSamples, k: f64) -> Result<()> {
        self.check_samples(samples)?;
        for (layer, s) in self.layers.iter_mut().zip(samples) {
            for ((a, tile), x) in layer.tiles.iter_mut().zip(s) {
                let r = optimize_input_range(x.as_slice(), k)
                    .map_err(|e| e.with_context(&format!("tile {}", a.tile_index)))?;
                tile.set_input_range(r)?;
            }
        }
        Ok(())
    }

    /// Conductance-range calibration of every tile.
    pub fn calibrate_conductance_ranges(
        &mut self,
        samples: &TileSamples,
        cal: &ResolvedCalibration,
    ) -> Result<CalibrationReport> {
        self.check_samples(samples)?;
        let mut report = CalibrationReport::default();
        for (layer, s) in self.layers.iter_mut().zip(samples) {
            for ((a, tile), x) in layer.tiles.iter_mut().zip(s) {
                let (updated, columns) = optimize_conductance_ranges(tile, x, cal)?;
                *tile = updated;
                report.tiles.push(TileCalibration {
                    tile: a.tile_index,
                    input_range: tile.input_range,
                    columns,
                });
            }
        }
        Ok(report)
    }

    /// Program every tile at time `at`; tile `k` uses stream `rng.derive(k)`.
    pub fn program(&mut self, rng: RngStream, at: f64) -> Result<()> {
        for layer in &mut self.layers {
            for (a, tile) in &mut layer.tiles {
                tile.program(rng.derive(a.tile_index as u64), at)?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix, mode: &ForwardMode, rng: RngStream) -> Result<Matrix> {
        let mut input = x.clone();
        for layer in &self.layers {
            if input.cols() != layer.in_dim {
                return Err(AimcError::Shape(format!(
                    "layer {} expects {} inputs, got {}",
                    layer.name,
                    layer.in_dim,
                    input.cols()
                )));
            }
            let mut out = Matrix::zeros(input.rows(), layer.out_dim);
            for (a, tile) in &layer.tiles {
                let xs = column_block(&input, a.row_span.start, a.row_span.len);
                let y = tile_forward_batch(tile, &xs, mode, rng.derive(a.tile_index as u64))?;
                for b in 0..y.rows() {
                    let row = out.row_mut(b);
                    for (j, v) in y.row(b).iter().enumerate() {
                        row[a.col_span.start + j] += v;
                    }
                }
            }
            finish_layer(&mut out, &layer.bias, layer.relu);
            input = out;
        }
        Ok(input)
    }
}

/// Index of the largest entry of each row.
pub fn argmax_rows(y: &Matrix) -> Vec<usize> {
    (0..y.rows())
        .map(|b| {
            let row = y.row(b);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}
