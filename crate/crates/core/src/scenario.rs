//! Scenario bundle: binds initiating events to procedures and collects every
//! config the runtime needs. Paths in the scenario file are relative to the
//! config directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::{GateModel, Thresholds};
use crate::iekg::{InterfaceGraph, ScreenBounds};
use crate::perception::{Calibration, SignatureSet};
use crate::procedure::{parse_procedure, ProcedureStep};
use crate::risk::PifModel;
use crate::twin::TimingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ConfigError {
    fn invalid(path: &Path, message: impl ToString) -> Self {
        Self::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn default_window() -> usize {
    50
}
fn default_batch() -> usize {
    10
}
fn default_expiry() -> u64 {
    600
}
fn default_true() -> bool {
    true
}
fn default_deadline_ms() -> u64 {
    150_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureBindingConfig {
    pub event_id: String,
    pub name: String,
    pub file: String,
    /// Time available per step when no per-step budget is given, seconds.
    pub t_avail_s: f64,
    #[serde(default)]
    pub step_t_avail_s: BTreeMap<String, f64>,
    /// Steps evaluated with the confusion evidence set.
    #[serde(default)]
    pub confusion: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub telemetry: Option<String>,
    pub graph: String,
    pub signatures: String,
    pub calibration: String,
    #[serde(default)]
    pub timing: Option<String>,
    #[serde(default)]
    pub pif_model: Option<String>,
    #[serde(default)]
    pub gate: Option<String>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_batch")]
    pub batch_frames: usize,
    #[serde(default = "default_expiry")]
    pub approval_expiry_ticks: u64,
    #[serde(default = "default_true")]
    pub auto_execute_allow: bool,
    #[serde(default = "default_deadline_ms")]
    pub assessor_deadline_ms: u64,
    #[serde(default)]
    pub screen: Option<[f64; 2]>,
    pub procedures: Vec<ProcedureBindingConfig>,
}

#[derive(Debug, Clone)]
pub struct ProcedureBinding {
    pub event_id: String,
    pub name: String,
    pub steps: Vec<ProcedureStep>,
    pub t_avail_s: f64,
    pub step_t_avail_s: BTreeMap<String, f64>,
    pub confusion: BTreeSet<String>,
}

impl ProcedureBinding {
    pub fn t_avail(&self, step_id: &str) -> f64 {
        self.step_t_avail_s.get(step_id).copied().unwrap_or(self.t_avail_s)
    }
}

/// Everything a runtime needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub config_dir: PathBuf,
    pub graph: InterfaceGraph,
    pub procedures: BTreeMap<String, ProcedureBinding>,
    pub timing: TimingConfig,
    pub pif_model: PifModel,
    pub gate: GateModel,
    pub calibration: Calibration,
    pub signatures: SignatureSet,
}

impl Scenario {
    pub fn load(scenario_path: &Path, config_dir: &Path) -> Result<Self, ConfigError> {
        let text = read_file(scenario_path)?;
        let config: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::invalid(scenario_path, e))?;
        Self::from_config(config, config_dir)
    }

    pub fn from_config(config: ScenarioConfig, config_dir: &Path) -> Result<Self, ConfigError> {
        let at = |rel: &str| config_dir.join(rel);

        let bounds = config
            .screen
            .map(|[width, height]| ScreenBounds { width, height })
            .unwrap_or_default();
        let graph_path = at(&config.graph);
        let graph = InterfaceGraph::from_json_with_bounds(&read_file(&graph_path)?, bounds)
            .map_err(|e| ConfigError::invalid(&graph_path, e))?;

        let timing = match &config.timing {
            Some(rel) => {
                let p = at(rel);
                TimingConfig::from_toml(&read_file(&p)?).map_err(|e| ConfigError::invalid(&p, e))?
            }
            None => TimingConfig::default(),
        };
        let pif_model = match &config.pif_model {
            Some(rel) => {
                let p = at(rel);
                PifModel::from_toml(&read_file(&p)?).map_err(|e| ConfigError::invalid(&p, e))?
            }
            None => PifModel::default(),
        };
        let mut gate = match &config.gate {
            Some(rel) => {
                let p = at(rel);
                GateModel::from_toml(&read_file(&p)?).map_err(|e| ConfigError::invalid(&p, e))?
            }
            None => GateModel::default(),
        };
        if let Some(t) = config.thresholds {
            t.validate()
                .map_err(|e| ConfigError::invalid(Path::new(&config.id), e))?;
            gate.thresholds = t;
        }

        let cal_path = at(&config.calibration);
        let calibration =
            Calibration::from_toml(&read_file(&cal_path)?).map_err(|e| ConfigError::invalid(&cal_path, e))?;
        let sig_path = at(&config.signatures);
        let signatures =
            SignatureSet::from_toml(&read_file(&sig_path)?).map_err(|e| ConfigError::invalid(&sig_path, e))?;
        let dim = calibration.parameters.len() * 2;
        if let Some(bad) = signatures.signatures.iter().find(|s| s.centroid.len() != dim) {
            return Err(ConfigError::invalid(
                &sig_path,
                format!(
                    "signature `{}` has {} features, calibration implies {dim}",
                    bad.event_id,
                    bad.centroid.len()
                ),
            ));
        }
        if signatures.signatures.is_empty() {
            return Err(ConfigError::invalid(&sig_path, "no signatures"));
        }
        if config.window_len < 2 || config.batch_frames == 0 {
            return Err(ConfigError::invalid(
                Path::new(&config.id),
                "window_len must be >= 2 and batch_frames >= 1",
            ));
        }

        let mut procedures = BTreeMap::new();
        for b in &config.procedures {
            let p = at(&b.file);
            let steps = parse_procedure(&read_file(&p)?).map_err(|e| ConfigError::invalid(&p, e))?;
            if !(b.t_avail_s > 0.0) || b.step_t_avail_s.values().any(|t| !(*t > 0.0)) {
                return Err(ConfigError::invalid(&p, "time available must be > 0"));
            }
            if let Some(unknown) = b
                .step_t_avail_s
                .keys()
                .chain(&b.confusion)
                .find(|id| !steps.iter().any(|s| &s.id == *id))
            {
                return Err(ConfigError::invalid(
                    &p,
                    format!("scenario names unknown step `{unknown}`"),
                ));
            }
            let binding = ProcedureBinding {
                event_id: b.event_id.clone(),
                name: b.name.clone(),
                steps,
                t_avail_s: b.t_avail_s,
                step_t_avail_s: b.step_t_avail_s.clone(),
                confusion: b.confusion.iter().cloned().collect(),
            };
            if procedures.insert(b.event_id.clone(), binding).is_some() {
                return Err(ConfigError::invalid(
                    Path::new(&config.id),
                    format!("event `{}` bound twice", b.event_id),
                ));
            }
        }

        Ok(Self {
            config,
            config_dir: config_dir.to_path_buf(),
            graph,
            procedures,
            timing,
            pif_model,
            gate,
            calibration,
            signatures,
        })
    }

    pub fn default_telemetry(&self) -> Option<PathBuf> {
        self.config.telemetry.as_ref().map(|t| self.config_dir.join(t))
    }
}
