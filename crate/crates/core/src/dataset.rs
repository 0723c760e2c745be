// SPDX-License-Identifier: Apache-2.0
//! Synthetic two-class data in the plane.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AimcError, Result};
use crate::matrix::Matrix;
use crate::rng::{standard_normal, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n × features
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(AimcError::Shape(format!(
                "{} samples but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows `idx` as a new dataset.
    pub fn select(&self, idx: &[usize]) -> Self {
        let x = Matrix::from_fn(idx.len(), self.features(), |i, j| self.x.get(idx[i], j));
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self { x, labels }
    }

    /// Consecutive batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Dataset> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |s| {
            let idx: Vec<usize> = (s..(s + size).min(self.len())).collect();
            self.select(&idx)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Std of the isotropic jitter added to each point.
    pub noise: f64,
    /// Multiplies every coordinate after centering.
    pub scale: f64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self {
            n_train: 1024,
            n_val: 256,
            noise: 0.15,
            scale: 2.0,
        }
    }
}

/// Two interleaved half circles.
pub fn make_moons(n: usize, noise: f64, scale: f64, rng: RngStream) -> Dataset {
    let mut gen = rng.generator();
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let theta = gen.random_range(0.0..std::f64::consts::PI);
        let (mut px, mut py) = if label == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        px += noise * standard_normal(&mut gen) - 0.5;
        py += noise * standard_normal(&mut gen) - 0.25;
        x.set(i, 0, scale * px);
        x.set(i, 1, scale * py);
        labels.push(label);
    }
    Dataset { x, labels }
}

/// Train and validation sets drawn from independent streams.
pub fn moons_split(cfg: &MoonsConfig, rng: RngStream) -> Result<(Dataset, Dataset)> {
    if cfg.n_train == 0 || cfg.n_val == 0 {
        return Err(AimcError::InvalidConfig(
            "dataset splits must be non-empty".into(),
        ));
    }
    Ok((
        make_moons(cfg.n_train, cfg.noise, cfg.scale, rng.derive(0)),
        make_moons(cfg.n_val, cfg.noise, cfg.scale, rng.derive(1)),
    ))
}
