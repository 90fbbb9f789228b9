//! TOML run configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ServoConfig;
use crate::datagen::{CollectionSpec, SweepSpec};
use crate::estimator::TrainConfig;
use crate::evaluation::{CrossSizeSpec, TaskKind, TaskSpec};
use crate::geometry::LimbSpec;
use crate::sensor::{CapModelParams, SensorArraySpec, SensorRig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub array: SensorArraySpec,
    pub model: CapModelParams,
    /// Replace `model.noise_sd` with the calibrated reference noise level.
    pub calibrate_noise: bool,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self { array: SensorArraySpec::default(), model: CapModelParams::default(), calibrate_noise: true }
    }
}

impl SensorSection {
    pub fn rig(&self) -> SensorRig {
        let model = if self.calibrate_noise { self.model.clone().calibrated(&self.array) } else { self.model.clone() };
        SensorRig { array: self.array.clone(), model }
    }
}

/// Single closed-loop run for the `servo` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoSection {
    pub task: TaskKind,
    pub joint_angle_deg: f64,
    pub trial: usize,
    /// Replaces the task's limb geometry.
    pub limb: Option<LimbSpec>,
    /// Exit nonzero on lost track or contact.
    pub strict: bool,
    /// Overrides the task's traversal length.
    pub run_length_cm: Option<f64>,
    /// Loop settings; the task sets the direction of `v_x_cm_s` and, unless
    /// `run_length_cm` is given, the run length.
    pub config: ServoConfig,
}

impl Default for ServoSection {
    fn default() -> Self {
        Self {
            task: TaskKind::BentElbow,
            joint_angle_deg: 90.0,
            trial: 0,
            limb: None,
            strict: true,
            run_length_cm: None,
            config: ServoConfig::default(),
        }
    }
}

impl ServoSection {
    pub fn task_spec(&self) -> TaskSpec {
        let mut spec = TaskSpec::preset(self.task);
        if let Some(limb) = &self.limb {
            spec.limb = limb.clone();
        }
        spec.joint_angles_deg = vec![self.joint_angle_deg];
        if let Some(l) = self.run_length_cm {
            spec.run_length_cm = l;
        }
        spec
    }

    pub fn servo_config(&self) -> ServoConfig {
        self.task_spec().servo_config(&self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Held-out trajectories per station for the error table.
    pub test_trajectories: usize,
    pub sweep: SweepSpec,
    pub sweep_runs: usize,
    /// Index into `collection.stations` used for the sweeps.
    pub sweep_station: usize,
    pub tasks: Vec<TaskKind>,
    pub trials: usize,
    pub cross_size: CrossSizeSpec,
    /// One model is trained per seed; empty skips the cross-size table.
    pub cross_size_seeds: Vec<u64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            test_trajectories: 20,
            sweep: SweepSpec::default(),
            sweep_runs: 20,
            sweep_station: 1,
            tasks: TaskKind::ALL.to_vec(),
            trials: 5,
            cross_size: CrossSizeSpec::default(),
            cross_size_seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub sensor: SensorSection,
    pub collection: CollectionSpec,
    pub train: TrainConfig,
    pub servo: ServoSection,
    pub report: ReportSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Loads `path` (if any) and applies `key.path=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sensor.rig().validate().map_err(|e| invalid(&e))?;
        self.collection.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.servo.servo_config().validate().map_err(|e| invalid(&e))?;
        self.servo.task_spec().validate().map_err(|e| invalid(&e))?;
        if self.report.sweep_station >= self.collection.stations.len() {
            return Err(ConfigError::Invalid(format!(
                "report.sweep_station {} out of range for {} stations",
                self.report.sweep_station,
                self.collection.stations.len()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Sets `key.path` to `value`. The value is read as a TOML literal and falls
/// back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key is present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, path) = parts.split_last().expect("at least one key part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
