// SPDX-License-Identifier: Apache-2.0
//! Layer-to-tile mapping, differential conductance encoding and utilization.
//!
//! Each weight dimension is cut into full tile-sized spans with the
//! remainder in the last span. A layer gets one tile per (row span, column
//! span) pair; tiles are never shared between layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TileHardwareConfig;
use crate::error::{AimcError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    /// Unfolded convolution: rows = k_h · k_w · c_in, cols = c_out.
    Conv,
    /// Parameters that stay digital (embeddings, norms). Counted, never mapped.
    Other,
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "conv" => Ok(Self::Conv),
            "other" => Ok(Self::Other),
            _ => Err(format!(
                "unknown layer kind `{s}` (expected linear, conv or other)"
            )),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Conv => "conv",
            Self::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub rows: usize,
    pub cols: usize,
    /// Per-output bias kept in the digital periphery; counted as a mapped parameter.
    pub bias: bool,
}

impl LayerShape {
    pub fn linear(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Linear,
            rows,
            cols,
            bias: false,
        }
    }

    pub fn conv(
        name: impl Into<String>,
        k_h: usize,
        k_w: usize,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv,
            rows: k_h * k_w * c_in,
            cols: c_out,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn is_mapped(&self) -> bool {
        self.kind != LayerKind::Other
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.cols + if self.bias { self.cols } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAssignment {
    pub layer: String,
    /// Network-wide tile index.
    pub tile_index: usize,
    pub row_span: Span,
    pub col_span: Span,
}

impl TileAssignment {
    pub fn cells(&self) -> usize {
        self.row_span.len * self.col_span.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerUtilization {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub tiles: usize,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// All parameters in the manifest, mapped or not.
    pub total_params: usize,
    /// Weights and biases of the mapped layers.
    pub mapped_params: usize,
    pub num_tiles: usize,
    /// Mean over mapped layers of (layer cells / (layer tiles · tile cells)).
    pub avg_utilization: f64,
    /// Mean over tiles of (assigned cells / tile cells).
    pub avg_tile_fill: f64,
    pub layers: Vec<LayerUtilization>,
}

/// Span lengths for a dimension of `m` on tiles of size `tile`: full tiles,
/// then the remainder.
pub fn partition_dim(m: usize, tile: usize) -> Vec<usize> {
    assert!(
        m >= 1 && tile >= 1,
        "partition_dim needs m >= 1 and tile >= 1"
    );
    let k = m.div_ceil(tile);
    let mut spans = vec![tile; k];
    spans[k - 1] = m - (k - 1) * tile;
    spans
}

fn spans_of(m: usize, tile: usize) -> Vec<Span> {
    let mut start = 0;
    partition_dim(m, tile)
        .into_iter()
        .map(|len| {
            let s = Span { start, len };
            start += len;
            s
        })
        .collect()
}

/// Tile assignments of one layer, numbered from `first_index`.
pub fn map_layer(
    shape: &LayerShape,
    tile_rows: usize,
    tile_cols: usize,
    first_index: usize,
) -> Vec<TileAssignment> {
    let mut out = Vec::new();
    for row_span in spans_of(shape.rows, tile_rows) {
        for col_span in spans_of(shape.cols, tile_cols) {
            out.push(TileAssignment {
                layer: shape.name.clone(),
                tile_index: first_index + out.len(),
                row_span,
                col_span,
            });
        }
    }
    out
}

pub fn map_network(
    shapes: &[LayerShape],
    config: &TileHardwareConfig,
) -> Result<(Vec<TileAssignment>, UtilizationReport)> {
    if shapes.is_empty() {
        return Err(AimcError::EmptyInput("no layers to map".into()));
    }
    let tile_cells = (config.rows * config.cols) as f64;
    let mut assignments = Vec::new();
    let mut layers = Vec::new();
    let mut total_params = 0;
    let mut mapped_params = 0;
    for shape in shapes {
        if shape.rows == 0 || shape.cols == 0 {
            return Err(AimcError::InvalidConfig(format!(
                "layer `{}` has an empty dimension",
                shape.name
            )));
        }
        total_params += shape.param_count();
        if !shape.is_mapped() {
            continue;
        }
        mapped_params += shape.param_count();
        let tiles = map_layer(shape, config.rows, config.cols, assignments.len());
        let cells: usize = tiles.iter().map(TileAssignment::cells).sum();
        layers.push(LayerUtilization {
            name: shape.name.clone(),
            rows: shape.rows,
            cols: shape.cols,
            tiles: tiles.len(),
            utilization: cells as f64 / (tiles.len() as f64 * tile_cells),
        });
        assignments.extend(tiles);
    }
    if assignments.is_empty() {
        return Err(AimcError::EmptyInput(
            "manifest has no mapped layers".into(),
        ));
    }
    let avg_utilization = layers.iter().map(|l| l.utilization).sum::<f64>() / layers.len() as f64;
    let avg_tile_fill = assignments
        .iter()
        .map(|a| a.cells() as f64 / tile_cells)
        .sum::<f64>()
        / assignments.len() as f64;
    let report = UtilizationReport {
        total_params,
        mapped_params,
        num_tiles: assignments.len(),
        avg_utilization,
        avg_tile_fill,
        layers,
    };
    Ok((assignments, report))
}

/// Parse a layer manifest.
///
/// One record per line: `name kind rows cols [bias|nobias]`, whitespace
/// separated. `#` starts a comment; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<LayerShape>> {
    let mut shapes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| AimcError::Parse {
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(parse_err(format!(
                "expected `name kind rows cols [bias|nobias]`, got {} fields",
                fields.len()
            )));
        }
        let kind = fields[1].parse::<LayerKind>().map_err(parse_err)?;
        let dim = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(parse_err(format!(
                    "{what} must be a positive integer, got `{s}`"
                ))),
            }
        };
        let rows = dim(fields[2], "rows")?;
        let cols = dim(fields[3], "cols")?;
        let bias = match fields.get(4) {
            None | Some(&"nobias") => false,
            Some(&"bias") => true,
            Some(other) => {
                return Err(parse_err(format!(
                    "bias flag must be `bias` or `nobias`, got `{other}`"
                )))
            }
        };
        shapes.push(LayerShape {
            name: fields[0].to_string(),
            kind,
            rows,
            cols,
            bias,
        });
    }
    if shapes.is_empty() {
        return Err(AimcError::EmptyInput(
            "manifest contains no layer records".into(),
        ));
    }
    Ok(shapes)
}

/// Differential pair for unit weights: `g+ = cap·max(w, 0)`, `g− = cap·max(−w, 0)`.
pub fn encode_differential(w_unit: &Matrix, g_cap: &[f64]) -> Result<(Matrix, Matrix)> {
    if g_cap.len() != w_unit.cols() {
        return Err(AimcError::Shape(format!(
            "{} column caps for {} columns",
            g_cap.len(),
            w_unit.cols()
        )));
    }
    if let Some(bad) = w_unit.as_slice().iter().find(|w| !(w.abs() <= 1.0)) {
        return Err(AimcError::MappingDomain(format!(
            "unit weight {bad} outside [-1, 1]"
        )));
    }
    let plus = Matrix::from_fn(w_unit.rows(), w_unit.cols(), |i, j| {
        g_cap[j] * w_unit.get(i, j).max(0.0)
    });
    let minus = Matrix::from_fn(w_unit.rows(), w_unit.cols(), |i, j| {
        g_cap[j] * (-w_unit.get(i, j)).max(0.0)
    });
    Ok((plus, minus))
}

/// Inverse of [`encode_differential`].
pub fn decode_differential(g_plus: &Matrix, g_minus: &Matrix, g_cap: &[f64]) -> Result<Matrix> {
    let diff = g_plus.zip_map(g_minus, |p, m| p - m)?;
    if g_cap.len() != diff.cols() {
        return Err(AimcError::Shape("column cap count".into()));
    }
    Ok(Matrix::from_fn(diff.rows(), diff.cols(), |i, j| {
        diff.get(i, j) / g_cap[j]
    }))
}
