// SPDX-License-Identifier: Apache-2.0
//! Deterministic simulator of analog in-memory-computing crossbar inference
//! with post-training calibration of DAC input ranges and per-bitline
//! conductance ranges, plus a small hardware-aware training loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod device;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod harness;
pub mod ir_drop;
pub mod mapping;
pub mod matrix;
pub mod network;
pub mod quant;
pub mod rng;
pub mod tile;
pub mod train;

pub use config::{NoiseModel, TileHardwareConfig};
pub use error::{AimcError, Result};
pub use forward::{
    ideal_mvm, saturation_current, tile_forward, tile_forward_batch, ForwardMode, ModeKind,
};
pub use matrix::Matrix;
pub use rng::RngStream;
pub use tile::AnalogTile;
