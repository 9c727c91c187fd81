//! Contextual (cognitive) failure probability.
//!
//! Each macro-cognitive function a step engages has a base error
//! probability that is scaled by performance influencing factor (PIF)
//! multipliers; engaged functions fail independently.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::procedure::{ExecutionPath, ProcedureStep, StepKind};

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("no model configured for engaged function {0}")]
    MissingConfig(CognitiveFunction),
    #[error("PIF `{0}` has no level in the assessed state")]
    MissingPif(String),
    #[error("invalid PIF model: {0}")]
    InvalidModel(String),
    #[error("assessor exceeded its {0:?} deadline")]
    DeadlineExceeded(Duration),
}

pub const DEFAULT_PIFS: [&str; 5] = [
    "information_completeness",
    "hsi_complexity",
    "time_pressure",
    "task_complexity",
    "workload",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Nominal,
    Moderate,
    High,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Nominal, Severity::Moderate, Severity::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::Moderate => "moderate",
            Self::High => "high",
        }
    }

    fn grade(value: f64, moderate_at: f64, high_at: f64) -> Self {
        if value >= high_at {
            Self::High
        } else if value >= moderate_at {
            Self::Moderate
        } else {
            Self::Nominal
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveFunction {
    Detection,
    Understanding,
    DecisionMaking,
    ActionExecution,
}

impl CognitiveFunction {
    pub const ALL: [CognitiveFunction; 4] = [
        CognitiveFunction::Detection,
        CognitiveFunction::Understanding,
        CognitiveFunction::DecisionMaking,
        CognitiveFunction::ActionExecution,
    ];
}

impl fmt::Display for CognitiveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Detection => "detection",
            Self::Understanding => "understanding",
            Self::DecisionMaking => "decision_making",
            Self::ActionExecution => "action_execution",
        })
    }
}

/// Functions a step exercises, by kind.
pub fn engaged_functions(kind: StepKind) -> &'static [CognitiveFunction] {
    use CognitiveFunction::*;
    match kind {
        StepKind::ParameterCheck | StepKind::Checklist => &[Detection, Understanding],
        StepKind::ScreenNavigation | StepKind::TopLeftToggle => &[Detection, ActionExecution],
        StepKind::FlowchartExecution => &[Detection, Understanding, DecisionMaking, ActionExecution],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PifState(pub BTreeMap<String, Severity>);

impl PifState {
    pub fn nominal(pifs: &[&str]) -> Self {
        Self(pifs.iter().map(|p| (p.to_string(), Severity::Nominal)).collect())
    }

    pub fn set(&mut self, pif: &str, level: Severity) {
        self.0.insert(pif.to_string(), level);
    }

    pub fn level(&self, pif: &str) -> Option<Severity> {
        self.0.get(pif).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Severity)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn worst(&self) -> Severity {
        self.0.values().copied().max().unwrap_or(Severity::Nominal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelFactors {
    pub moderate: f64,
    pub high: f64,
}

impl LevelFactors {
    pub fn factor(&self, level: Severity) -> f64 {
        match level {
            Severity::Nominal => 1.0,
            Severity::Moderate => self.moderate,
            Severity::High => self.high,
        }
    }
}

impl Default for LevelFactors {
    fn default() -> Self {
        Self {
            moderate: 3.0,
            high: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveFunctionModel {
    pub base_hep: f64,
    /// Per-PIF overrides; PIFs not listed use the model-wide defaults.
    #[serde(default)]
    pub multipliers: BTreeMap<String, LevelFactors>,
}

impl CognitiveFunctionModel {
    pub fn new(base_hep: f64) -> Self {
        Self {
            base_hep,
            multipliers: BTreeMap::new(),
        }
    }
}

/// Thresholds for the rule-based assessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessorThresholds {
    pub hsi_nodes_moderate: usize,
    pub hsi_nodes_high: usize,
    pub targets_moderate: usize,
    pub targets_high: usize,
    pub workload_moderate: f64,
    pub workload_high: f64,
    pub pressure_moderate: f64,
    pub pressure_high: f64,
}

impl Default for AssessorThresholds {
    fn default() -> Self {
        Self {
            hsi_nodes_moderate: 4,
            hsi_nodes_high: 8,
            targets_moderate: 5,
            targets_high: 8,
            workload_moderate: 35.0,
            workload_high: 50.0,
            pressure_moderate: 0.5,
            pressure_high: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PifModel {
    pub functions: BTreeMap<CognitiveFunction, CognitiveFunctionModel>,
    #[serde(default)]
    pub default_multipliers: LevelFactors,
    #[serde(default = "default_pif_names")]
    pub pifs: Vec<String>,
    #[serde(default)]
    pub assessor: AssessorThresholds,
}

fn default_pif_names() -> Vec<String> {
    DEFAULT_PIFS.iter().map(|s| s.to_string()).collect()
}

impl Default for PifModel {
    /// Placeholder base HEPs; the shipped config file carries the same values.
    fn default() -> Self {
        use CognitiveFunction::*;
        let functions = [
            (Detection, 1e-3),
            (Understanding, 2e-3),
            (DecisionMaking, 2e-3),
            (ActionExecution, 1e-3),
        ]
        .into_iter()
        .map(|(f, b)| (f, CognitiveFunctionModel::new(b)))
        .collect();
        Self {
            functions,
            default_multipliers: LevelFactors::default(),
            pifs: default_pif_names(),
            assessor: AssessorThresholds::default(),
        }
    }
}

impl PifModel {
    pub fn from_toml(text: &str) -> Result<Self, RiskError> {
        let model: Self = toml::from_str(text).map_err(|e| RiskError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let check = |f: &LevelFactors, what: &str| {
            if f.moderate < 1.0 || f.high < 1.0 || !f.moderate.is_finite() || !f.high.is_finite() {
                Err(RiskError::InvalidModel(format!("{what}: multipliers must be >= 1")))
            } else {
                Ok(())
            }
        };
        check(&self.default_multipliers, "default_multipliers")?;
        for (func, m) in &self.functions {
            if !(m.base_hep > 0.0 && m.base_hep < 1.0) {
                return Err(RiskError::InvalidModel(format!("{func}: base_hep must lie in (0, 1)")));
            }
            for (pif, f) in &m.multipliers {
                check(f, &format!("{func}.{pif}"))?;
            }
        }
        Ok(())
    }

    fn factors(&self, model: &CognitiveFunctionModel, pif: &str) -> LevelFactors {
        model.multipliers.get(pif).copied().unwrap_or(self.default_multipliers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionHep {
    pub function: CognitiveFunction,
    pub hep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveFailure {
    pub p_c: f64,
    pub functions: Vec<FunctionHep>,
}

/// `P_c = 1 - prod(1 - h_f)` over the functions engaged by `kind`, where
/// `h_f = min(base_f * prod(multipliers), 1)`.
pub fn p_c(kind: StepKind, pifs: &PifState, model: &PifModel) -> Result<CognitiveFailure, RiskError> {
    let mut survive = 1.0;
    let mut functions = Vec::new();
    for &func in engaged_functions(kind) {
        let fm = model.functions.get(&func).ok_or(RiskError::MissingConfig(func))?;
        let mut h = fm.base_hep;
        for pif in &model.pifs {
            let level = pifs.level(pif).ok_or_else(|| RiskError::MissingPif(pif.clone()))?;
            h *= model.factors(fm, pif).factor(level);
        }
        let h = h.min(1.0);
        survive *= 1.0 - h;
        functions.push(FunctionHep { function: func, hep: h });
    }
    Ok(CognitiveFailure {
        p_c: (1.0 - survive).clamp(0.0, 1.0),
        functions,
    })
}

pub struct AssessmentContext<'a> {
    pub step: &'a ProcedureStep,
    pub path: &'a ExecutionPath,
    pub workload_score: f64,
    pub time_pressure_ratio: f64,
}

/// Source of PIF levels for a step. The default is deterministic and
/// table driven; a model-backed assessor plugs in here and must answer
/// within `deadline`.
pub trait PifAssessor: Send + Sync {
    fn assess(&self, ctx: &AssessmentContext<'_>, deadline: Duration) -> Result<PifState, RiskError>;
}

#[derive(Debug, Clone, Default)]
pub struct RuleAssessor {
    pub thresholds: AssessorThresholds,
}

impl RuleAssessor {
    pub fn new(thresholds: AssessorThresholds) -> Self {
        Self { thresholds }
    }
}

impl PifAssessor for RuleAssessor {
    fn assess(&self, ctx: &AssessmentContext<'_>, _deadline: Duration) -> Result<PifState, RiskError> {
        Ok(assess_pifs(ctx, &self.thresholds))
    }
}

pub fn assess_pifs(ctx: &AssessmentContext<'_>, t: &AssessorThresholds) -> PifState {
    let nodes = ctx.path.nodes.len() as f64;
    let targets = ctx.step.targets.len().max(ctx.path.verifications) as f64;
    let information = match ctx.step.kind {
        StepKind::ParameterCheck | StepKind::Checklist if ctx.step.expected_states.is_empty() => Severity::Moderate,
        _ => Severity::Nominal,
    };
    let mut state = PifState::default();
    state.set("information_completeness", information);
    state.set(
        "hsi_complexity",
        Severity::grade(nodes, t.hsi_nodes_moderate as f64, t.hsi_nodes_high as f64),
    );
    state.set(
        "time_pressure",
        Severity::grade(ctx.time_pressure_ratio, t.pressure_moderate, t.pressure_high),
    );
    state.set(
        "task_complexity",
        Severity::grade(targets, t.targets_moderate as f64, t.targets_high as f64),
    );
    state.set(
        "workload",
        Severity::grade(ctx.workload_score, t.workload_moderate, t.workload_high),
    );
    state
}
