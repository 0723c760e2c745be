// SPDX-License-Identifier: Apache-2.0
//! Error type shared by every module of the simulator.

use thiserror::Error;

pub type Result<T, E = AimcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AimcError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value outside mapping domain: {0}")]
    MappingDomain(String),

    #[error("temporal order violated: t = {t} s is earlier than {earliest} s")]
    TemporalOrder { t: f64, earliest: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("calibration data: {0}")]
    CalibrationData(String),

    #[error("training failed at epoch {epoch}, step {step}: {reason}")]
    TrainingFailure {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("tile not programmed: {0}")]
    NotProgrammed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config document: {0}")]
    Json(#[from] serde_json::Error),
}

impl AimcError {
    /// Short stable category name, used by the CLI error line and the C ABI.
    pub fn category(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "config",
            Self::Shape(_) => "shape",
            Self::MappingDomain(_) => "mapping-domain",
            Self::TemporalOrder { .. } => "temporal-order",
            Self::Numerical(_) => "numerical",
            Self::DegenerateRange(_) => "degenerate-range",
            Self::CalibrationData(_) => "calibration-data",
            Self::TrainingFailure { .. } => "training-failure",
            Self::Parse { .. } => "parse",
            Self::EmptyInput(_) => "empty-input",
            Self::NotProgrammed(_) => "not-programmed",
            Self::Io(_) => "io",
            Self::Json(_) => "config-document",
        }
    }

    /// Attach experiment context to a training failure; other variants pass through.
    pub fn with_context(self, context: &str) -> Self {
        match self {
            Self::TrainingFailure {
                epoch,
                step,
                reason,
            } => Self::TrainingFailure {
                epoch,
                step,
                reason: format!("{context}: {reason}"),
            },
            other => other,
        }
    }
}

pub(crate) fn shape_err(what: impl Into<String>) -> AimcError {
    AimcError::Shape(what.into())
}
