// SPDX-License-Identifier: Apache-2.0
//! Experiment configuration documents and CSV artifacts.
//!
//! An artifact starts with `# key: value` lines holding the resolved
//! configuration, followed by one header line and the data rows. Floats are
//! written in shortest round-trip form, so re-running a configuration
//! reproduces the data rows byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationConfig, REPORT_HEADER};
use crate::config::{NoiseModel, TileHardwareConfig};
use crate::error::{AimcError, Result};
use crate::experiments::{
    default_time_grid, run_ablation, run_mvm_error, run_tile_calibration, saturation_heavy,
    toy_train_config, train_toy, AblationSettings, MvmErrorSettings, TileCalibrationSettings,
};
use crate::mapping::{map_network, parse_manifest, UtilizationReport};
use crate::train::TrainConfig;

/// Layer manifest of the transformer used for the utilization report.
pub const ROBERTA_BASE_MANIFEST: &str = include_str!("../data/roberta_base.manifest");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MvmError,
    MapReport,
    Calibrate,
    TrainDemo,
    Ablation,
}

impl ExperimentKind {
    pub const ALL: [Self; 5] = [
        Self::MvmError,
        Self::MapReport,
        Self::Calibrate,
        Self::TrainDemo,
        Self::Ablation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MvmError => "mvm-error",
            Self::MapReport => "map-report",
            Self::Calibrate => "calibrate",
            Self::TrainDemo => "train-demo",
            Self::Ablation => "ablation",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = AimcError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AimcError::InvalidConfig(format!("unknown experiment `{s}`")))
    }
}

/// Configuration document. Every field is optional; missing sections take
/// the defaults of the selected experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub hardware: Option<TileHardwareConfig>,
    pub noise: Option<NoiseModel>,
    pub calibration: Option<CalibrationConfig>,
    pub train: Option<TrainConfig>,
    pub output_path: Option<PathBuf>,
    /// Evaluation times in seconds (mvm-error and calibrate).
    pub times: Option<Vec<f64>>,
    pub mvm: Option<MvmErrorSettings>,
    pub ablation: Option<AblationSettings>,
    pub tile_calibration: Option<TileCalibrationSettings>,
    /// Layer manifest for map-report; the built-in transformer manifest when absent.
    pub manifest: Option<PathBuf>,
}

/// Configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub repetitions: usize,
    pub hardware: TileHardwareConfig,
    pub noise: NoiseModel,
    pub calibration: CalibrationConfig,
    pub train: TrainConfig,
    pub output_path: Option<PathBuf>,
    pub times: Vec<f64>,
    pub mvm: MvmErrorSettings,
    pub ablation: AblationSettings,
    pub tile_calibration: TileCalibrationSettings,
    pub manifest: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Fill in defaults for `kind`. A document naming another experiment is rejected.
    pub fn resolve(&self, kind: ExperimentKind) -> Result<ResolvedConfig> {
        if let Some(named) = self.experiment {
            if named != kind {
                return Err(AimcError::InvalidConfig(format!(
                    "config is for `{named}` but `{kind}` was requested"
                )));
            }
        }
        let toy = matches!(
            kind,
            ExperimentKind::Calibrate | ExperimentKind::TrainDemo | ExperimentKind::Ablation
        );
        let hardware = match &self.hardware {
            Some(h) => h.clone(),
            None if toy => saturation_heavy(&TileHardwareConfig::default()),
            None => TileHardwareConfig::default(),
        };
        let default_reps = if kind == ExperimentKind::Ablation {
            10
        } else {
            1
        };
        let times = match kind {
            ExperimentKind::Calibrate => vec![20.0, crate::experiments::HOUR],
            _ => default_time_grid(),
        };
        let r = ResolvedConfig {
            experiment: kind,
            seed: self.seed.unwrap_or(1),
            repetitions: self.repetitions.unwrap_or(default_reps),
            noise: self
                .noise
                .clone()
                .unwrap_or_else(|| NoiseModel::pcm_like(hardware.g_max)),
            hardware,
            calibration: self.calibration.clone().unwrap_or_default(),
            train: self.train.clone().unwrap_or_else(toy_train_config),
            output_path: self.output_path.clone(),
            times: self.times.clone().unwrap_or(times),
            mvm: self.mvm.clone().unwrap_or_default(),
            ablation: self.ablation.clone().unwrap_or_default(),
            tile_calibration: self.tile_calibration.clone().unwrap_or_default(),
            manifest: self.manifest.clone(),
        };
        r.validate()?;
        Ok(r)
    }
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<()> {
        self.hardware.validate()?;
        self.noise.validate(self.hardware.g_max)?;
        self.train.validate()?;
        self.calibration.resolve(&self.hardware)?;
        if self.repetitions == 0 {
            return Err(AimcError::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(AimcError::InvalidConfig(
                "times must be non-empty, finite and > 0".into(),
            ));
        }
        Ok(())
    }

    /// Seeds of the repetitions: `seed, seed + 1, …`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|k| self.seed.wrapping_add(k))
            .collect()
    }
}

/// A CSV artifact: metadata lines, a header and data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub header: String,
    pub rows: Vec<String>,
}

impl Artifact {
    fn new(name: &str, cfg: &ResolvedConfig, header: &str) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            meta: vec![
                ("experiment".into(), cfg.experiment.to_string()),
                ("seed".into(), cfg.seed.to_string()),
                ("config".into(), serde_json::to_string(cfg)?),
            ],
            header: header.into(),
            rows: Vec::new(),
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    /// The data rows of a rendered artifact (everything after the header).
    pub fn data_rows(text: &str) -> Vec<&str> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .collect()
    }
}

/// Everything an experiment run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// The main artifact first.
    pub artifacts: Vec<Artifact>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn run_experiment(cfg: &ResolvedConfig) -> Result<RunOutput> {
    match cfg.experiment {
        ExperimentKind::MvmError => run_mvm_error_experiment(cfg),
        ExperimentKind::MapReport => run_map_report(cfg),
        ExperimentKind::Calibrate => run_calibrate(cfg),
        ExperimentKind::TrainDemo => run_train_demo(cfg),
        ExperimentKind::Ablation => run_calibration_ablation(cfg),
    }
}

pub fn run_mvm_error_experiment(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let mut art = Artifact::new("mvm-error", cfg, "time_seconds,l2_error_percent,seed")?;
    let reps: Vec<_> = cfg
        .seeds()
        .par_iter()
        .map(|&s| run_mvm_error(&cfg.hardware, &cfg.noise, &cfg.mvm, &cfg.times, s))
        .collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for rows in reps {
        for r in rows {
            art.rows.push(format!(
                "{},{},{}",
                num(r.time_seconds),
                num(r.l2_error_percent),
                r.seed
            ));
            summary.push(format!(
                "seed {} t={} s: L2 error {:.2} %",
                r.seed, r.time_seconds, r.l2_error_percent
            ));
        }
    }
    Ok(RunOutput {
        artifacts: vec![art],
        summary,
    })
}

/// Utilization report of the configured manifest.
pub fn map_report(cfg: &ResolvedConfig) -> Result<UtilizationReport> {
    let text = match &cfg.manifest {
        Some(p) => fs::read_to_string(p)?,
        None => ROBERTA_BASE_MANIFEST.to_string(),
    };
    let shapes = parse_manifest(&text)?;
    Ok(map_network(&shapes, &cfg.hardware)?.1)
}

pub fn run_map_report(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let report = map_report(cfg)?;
    let mut art = Artifact::new(
        "map-report",
        cfg,
        "scope,name,rows,cols,tiles,mapped_params,utilization",
    )?;
    for l in &report.layers {
        art.rows.push(format!(
            "layer,{},{},{},{},,{}",
            l.name,
            l.rows,
            l.cols,
            l.tiles,
            num(l.utilization)
        ));
    }
    art.rows.push(format!(
        "network,total,,,{},{},{}",
        report.num_tiles,
        report.mapped_params,
        num(report.avg_utilization)
    ));
    let summary = vec![
        format!("tiles: {}", report.num_tiles),
        format!("mapped parameters: {}", report.mapped_params),
        format!("total parameters: {}", report.total_params),
        format!(
            "average utilization: {:.2} %",
            100.0 * report.avg_utilization
        ),
        format!("average tile fill: {:.2} %", 100.0 * report.avg_tile_fill),
    ];
    Ok(RunOutput {
        artifacts: vec![art],
        summary,
    })
}

pub fn run_calibrate(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let reps: Vec<_> = cfg
        .seeds()
        .par_iter()
        .map(|&s| {
            run_tile_calibration(
                &cfg.hardware,
                &cfg.noise,
                &cfg.calibration,
                &cfg.tile_calibration,
                &cfg.times,
                s,
            )
        })
        .collect::<Result<_>>()?;
    let mut art = Artifact::new(
        "calibrate",
        cfg,
        "method,time_seconds,l2_error_percent,seed",
    )?;
    let mut report_art = Artifact::new("calibrate-report", cfg, &format!("seed,{REPORT_HEADER}"))?;
    let mut summary = Vec::new();
    for (seed, (rows, report)) in cfg.seeds().into_iter().zip(reps) {
        for r in rows {
            art.rows.push(format!(
                "{},{},{},{}",
                r.method,
                num(r.time_seconds),
                num(r.l2_error_percent),
                r.seed
            ));
            summary.push(format!(
                "seed {} {} t={} s: L2 error {:.2} %",
                r.seed, r.method, r.time_seconds, r.l2_error_percent
            ));
        }
        report_art
            .rows
            .extend(report.to_csv_rows().lines().map(|r| format!("{seed},{r}")));
    }
    Ok(RunOutput {
        artifacts: vec![art, report_art],
        summary,
    })
}

pub fn run_train_demo(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let runs: Vec<_> = cfg
        .seeds()
        .par_iter()
        .map(|&s| {
            train_toy(
                &cfg.ablation,
                &cfg.train,
                &cfg.hardware,
                cfg.train.learn_input_range,
                cfg.train.learn_conductance_scale,
                s,
            )
        })
        .collect::<Result<_>>()?;
    let mut art = Artifact::new("train-demo", cfg, "phase,epoch,split,loss,accuracy,seed")?;
    let mut summary = Vec::new();
    for (_, _, _, metrics) in runs {
        let mut phase = "pretrain";
        let mut last_epoch = None;
        for m in &metrics {
            if last_epoch.is_some_and(|e| m.epoch < e) {
                phase = "finetune";
            }
            last_epoch = Some(m.epoch);
            art.rows.push(format!(
                "{phase},{},{},{},{},{}",
                m.epoch,
                m.split,
                num(m.loss),
                num(m.accuracy),
                m.seed
            ));
        }
        if let Some(m) = metrics.iter().rev().find(|m| m.split == "val") {
            summary.push(format!(
                "seed {}: final validation accuracy {:.4}",
                m.seed, m.accuracy
            ));
        }
    }
    Ok(RunOutput {
        artifacts: vec![art],
        summary,
    })
}

pub fn run_calibration_ablation(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let seeds = cfg.seeds();
    let cells = run_ablation(
        &cfg.hardware,
        &cfg.noise,
        &cfg.calibration,
        &cfg.train,
        &cfg.ablation,
        &seeds,
    )?;
    let mut art = Artifact::new(
        "ablation",
        cfg,
        "input_range,conductance_range,time_seconds,mean_accuracy,std_accuracy,n_seeds,accuracies",
    )?;
    let mut summary = Vec::new();
    for c in &cells {
        let accs: Vec<String> = c.accuracies.iter().map(|&a| num(a)).collect();
        art.rows.push(format!(
            "{},{},{},{},{},{},{}",
            c.input.as_str(),
            c.conductance.as_str(),
            num(c.time_seconds),
            num(c.mean()),
            num(c.std()),
            c.accuracies.len(),
            accs.join(";")
        ));
        summary.push(format!(
            "{:>10} input, {:>10} conductance, t={} s: {:.4} ± {:.4}",
            c.input.as_str(),
            c.conductance.as_str(),
            c.time_seconds,
            c.mean(),
            c.std()
        ));
    }
    Ok(RunOutput {
        artifacts: vec![art],
        summary,
    })
}

/// Path of artifact `k`: the main artifact at `out`, others beside it with
/// the artifact name appended to the stem.
pub fn artifact_path(out: &Path, main: &str, artifact: &Artifact) -> PathBuf {
    if artifact.name == main {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let suffix = artifact.name.strip_prefix(main).unwrap_or(&artifact.name);
    out.with_file_name(format!("{stem}{suffix}.csv"))
}

/// Write every artifact of `run`, main artifact at `out`.
pub fn write_artifacts(out: &Path, kind: ExperimentKind, run: &RunOutput) -> Result<Vec<PathBuf>> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut written = Vec::new();
    for a in &run.artifacts {
        let p = artifact_path(out, kind.as_str(), a);
        fs::write(&p, a.render())?;
        written.push(p);
    }
    Ok(written)
}
