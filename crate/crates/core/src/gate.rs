//! Governance gate: fuses time and cognitive failure probabilities,
//! infers the action risk through the Bayesian network, and maps it to a
//! verdict. Anything other than `Allow` requires a human decision.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{BayesError, BayesNet, NetworkConfig};
use crate::risk::{PifState, Severity};

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("invalid thresholds: need 0 < allow_below ({allow_below}) <= suggest_below ({suggest_below}) <= 1")]
    InvalidThresholds { allow_below: f64, suggest_below: f64 },
    #[error(transparent)]
    Network(#[from] BayesError),
    #[error("invalid gate config: {0}")]
    Config(String),
}

/// Independent-failure union of the time and cognitive components.
pub fn fuse_step_hep(p_t: f64, p_c: f64) -> f64 {
    1.0 - (1.0 - p_t) * (1.0 - p_c)
}

pub fn systemic_hep(step_heps: &[f64]) -> f64 {
    1.0 - step_heps.iter().map(|h| 1.0 - h).product::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub allow_below: f64,
    pub suggest_below: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            allow_below: 1e-3,
            suggest_below: 5e-2,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), GateError> {
        let ok = self.allow_below > 0.0 && self.allow_below <= self.suggest_below && self.suggest_below <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(GateError::InvalidThresholds {
                allow_below: self.allow_below,
                suggest_below: self.suggest_below,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    Suggest,
    Block,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One contributing factor of a gate decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "factor", rename_all = "snake_case")]
pub enum Factor {
    Threshold {
        action_risk: f64,
        allow_below: f64,
        suggest_below: f64,
    },
    Probability {
        name: String,
        value: f64,
    },
    Pif {
        name: String,
        level: Severity,
    },
    Evidence {
        node: String,
        state: String,
    },
    /// Evidence node whose reset to its lowest state lowers the risk most.
    DominantEvidence {
        node: String,
        state: String,
        risk_reduction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub explanation: Vec<Factor>,
    pub approval_required: bool,
}

impl GateDecision {
    pub fn references_evidence(&self) -> bool {
        self.explanation
            .iter()
            .any(|f| matches!(f, Factor::Evidence { .. } | Factor::DominantEvidence { .. }))
    }
}

/// Map a risk to a verdict. `context` is carried into the explanation; a
/// threshold factor is always added when the verdict is not `Allow`.
pub fn decide(action_risk: f64, thresholds: &Thresholds, context: Vec<Factor>) -> Result<GateDecision, GateError> {
    thresholds.validate()?;
    let verdict = if action_risk < thresholds.allow_below {
        Verdict::Allow
    } else if action_risk < thresholds.suggest_below {
        Verdict::Suggest
    } else {
        Verdict::Block
    };
    let mut explanation = Vec::with_capacity(context.len() + 1);
    if verdict != Verdict::Allow {
        explanation.push(Factor::Threshold {
            action_risk,
            allow_below: thresholds.allow_below,
            suggest_below: thresholds.suggest_below,
        });
    }
    explanation.extend(context);
    Ok(GateDecision {
        verdict,
        explanation,
        approval_required: verdict != Verdict::Allow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    PT,
    PC,
    Workload,
    Confusion,
}

impl EvidenceSource {
    fn name(&self) -> &'static str {
        match self {
            Self::PT => "p_t",
            Self::PC => "p_c",
            Self::Workload => "workload",
            Self::Confusion => "confusion",
        }
    }
}

/// Discretizes one gate input onto an evidence node: the state index is the
/// number of cut points at or below the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBinding {
    pub node: String,
    pub source: EvidenceSource,
    #[serde(default)]
    pub cuts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub node: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub evidence: Vec<EvidenceBinding>,
    #[serde(flatten)]
    pub network: NetworkConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateInputs {
    pub p_t: f64,
    pub p_c: f64,
    pub workload_score: f64,
    pub confusion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskInference {
    pub action_risk: f64,
    pub evidence: BTreeMap<String, String>,
    pub dominant: Option<(String, String, f64)>,
}

/// Network plus the bindings that turn numeric inputs into evidence.
#[derive(Debug, Clone)]
pub struct GateModel {
    pub network: BayesNet,
    pub target: TargetSpec,
    pub thresholds: Thresholds,
    pub bindings: Vec<EvidenceBinding>,
}

pub const DEFAULT_GATE_TOML: &str = include_str!("../config/bayes_net.toml");

impl GateModel {
    pub fn build(config: &GateConfig) -> Result<Self, GateError> {
        config.thresholds.validate()?;
        let network = BayesNet::build(&config.network)?;
        network.state_index(&config.target.node, &config.target.state)?;
        for b in &config.evidence {
            let node = network
                .node(&b.node)
                .ok_or_else(|| GateError::Config(format!("evidence node `{}` not in network", b.node)))?;
            if b.node == config.target.node {
                return Err(GateError::Config("target node cannot be evidence".into()));
            }
            let needed = if b.source == EvidenceSource::Confusion {
                if !b.cuts.is_empty() {
                    return Err(GateError::Config(format!("`{}`: boolean source takes no cuts", b.node)));
                }
                2
            } else {
                if b.cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(GateError::Config(format!("`{}`: cuts must be ascending", b.node)));
                }
                b.cuts.len() + 1
            };
            if node.states.len() != needed {
                return Err(GateError::Config(format!(
                    "`{}` has {} states but its binding yields {needed}",
                    b.node,
                    node.states.len()
                )));
            }
        }
        Ok(Self {
            network,
            target: config.target.clone(),
            thresholds: config.thresholds,
            bindings: config.evidence.clone(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, GateError> {
        let cfg: GateConfig = toml::from_str(text).map_err(|e| GateError::Config(e.to_string()))?;
        Self::build(&cfg)
    }

    pub fn evidence_for(&self, inputs: &GateInputs) -> BTreeMap<String, String> {
        self.bindings
            .iter()
            .map(|b| {
                let idx = match b.source {
                    EvidenceSource::Confusion => usize::from(inputs.confusion),
                    EvidenceSource::PT => b.cuts.iter().filter(|c| inputs.p_t >= **c).count(),
                    EvidenceSource::PC => b.cuts.iter().filter(|c| inputs.p_c >= **c).count(),
                    EvidenceSource::Workload => b.cuts.iter().filter(|c| inputs.workload_score >= **c).count(),
                };
                let node = self.network.node(&b.node).expect("validated binding");
                (b.node.clone(), node.states[idx].clone())
            })
            .collect()
    }

    pub fn infer(&self, evidence: &BTreeMap<String, String>) -> Result<f64, GateError> {
        Ok(self
            .network
            .posterior(&self.target.node, &self.target.state, evidence)?)
    }

    pub fn assess(&self, inputs: &GateInputs) -> Result<RiskInference, GateError> {
        let evidence = self.evidence_for(inputs);
        let action_risk = self.infer(&evidence)?;
        let mut dominant: Option<(String, String, f64)> = None;
        for (node, state) in &evidence {
            let lowest = &self.network.node(node).expect("evidence node").states[0];
            if state == lowest {
                continue;
            }
            let mut relaxed = evidence.clone();
            relaxed.insert(node.clone(), lowest.clone());
            let drop = action_risk - self.infer(&relaxed)?;
            if dominant.as_ref().is_none_or(|(_, _, best)| drop > *best) {
                dominant = Some((node.clone(), state.clone(), drop));
            }
        }
        Ok(RiskInference {
            action_risk,
            evidence,
            dominant,
        })
    }

    /// Explanation factors for an assessed step, in a fixed order.
    pub fn explain(&self, inputs: &GateInputs, pifs: &PifState, inference: &RiskInference) -> Vec<Factor> {
        let mut out = vec![
            Factor::Probability {
                name: "p_t".into(),
                value: inputs.p_t,
            },
            Factor::Probability {
                name: "p_c".into(),
                value: inputs.p_c,
            },
        ];
        out.extend(
            pifs.iter()
                .filter(|(_, level)| *level != Severity::Nominal)
                .map(|(name, level)| Factor::Pif {
                    name: name.to_string(),
                    level,
                }),
        );
        out.extend(inference.evidence.iter().map(|(node, state)| Factor::Evidence {
            node: node.clone(),
            state: state.clone(),
        }));
        if let Some((node, state, drop)) = &inference.dominant {
            out.push(Factor::DominantEvidence {
                node: node.clone(),
                state: state.clone(),
                risk_reduction: *drop,
            });
        }
        out
    }

    pub fn binding_names(&self) -> Vec<(&str, &'static str)> {
        self.bindings
            .iter()
            .map(|b| (b.node.as_str(), b.source.name()))
            .collect()
    }
}

impl Default for GateModel {
    fn default() -> Self {
        Self::from_toml(DEFAULT_GATE_TOML).expect("bundled gate config is valid")
    }
}
