//! Structured procedures: parsing, compilation onto the interface graph,
//! the two-step (intend, then execute) lifecycle, and valve checklists.
//!
//! Procedure files are line oriented:
//!
//! ```text
//! # comment
//! [STEP SN4 screen_navigation] Set reactor turbine bypass valve
//! target: Screen Lookup
//! target: LBF20AA201
//! expect: LBF20AA201=Auto
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iekg::{Coords, GraphError, InterfaceGraph, NavAction};

#[derive(Debug, Error, PartialEq)]
pub enum ProcedureError {
    #[error("line {line}: malformed step: {reason}")]
    MalformedStep { line: usize, reason: String },
    #[error("duplicate step id `{0}`")]
    DuplicateStep(String),
    #[error("step `{step}`: target `{target}` does not match any interface element")]
    UnresolvableTarget { step: String, target: String },
    #[error("step `{step}`: target `{target}` matches several elements: {candidates:?}")]
    AmbiguousTarget {
        step: String,
        target: String,
        candidates: Vec<String>,
    },
    #[error("step `{step}`: {source}")]
    Routing {
        step: String,
        #[source]
        source: GraphError,
    },
    #[error("step `{step}`: cannot move from {from} to {to}")]
    LifecycleViolation {
        step: String,
        from: Lifecycle,
        to: Lifecycle,
    },
    #[error("checklist: {0}")]
    Checklist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    FlowchartExecution,
    ScreenNavigation,
    TopLeftToggle,
    ParameterCheck,
    Checklist,
}

impl FromStr for StepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "flowchart_execution" => Self::FlowchartExecution,
            "screen_navigation" => Self::ScreenNavigation,
            "top_left_toggle" => Self::TopLeftToggle,
            "parameter_check" => Self::ParameterCheck,
            "checklist" => Self::Checklist,
            other => return Err(format!("unknown step kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValveState {
    Open,
    Closed,
    Auto,
}

impl FromStr for ValveState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" => Ok(Self::Open),
            "closed" => Ok(Self::Closed),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown valve state `{other}`")),
        }
    }
}

impl fmt::Display for ValveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Open => "Open",
            Self::Closed => "Closed",
            Self::Auto => "Auto",
        })
    }
}

/// Verification-card lifecycle: an action is circled (intended) during the
/// reading phase and crossed (executed) afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lifecycle {
    Pending,
    Intended,
    Executed,
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureStep {
    pub id: String,
    pub text: String,
    pub kind: StepKind,
    pub targets: Vec<String>,
    #[serde(default)]
    pub expected_states: BTreeMap<String, ValveState>,
    pub lifecycle: Lifecycle,
}

impl ProcedureStep {
    pub fn mark_intended(&mut self) -> Result<(), ProcedureError> {
        self.transition(Lifecycle::Pending, Lifecycle::Intended)
    }

    pub fn mark_executed(&mut self) -> Result<(), ProcedureError> {
        self.transition(Lifecycle::Intended, Lifecycle::Executed)
    }

    fn transition(&mut self, required: Lifecycle, next: Lifecycle) -> Result<(), ProcedureError> {
        if self.lifecycle != required {
            return Err(ProcedureError::LifecycleViolation {
                step: self.id.clone(),
                from: self.lifecycle,
                to: next,
            });
        }
        self.lifecycle = next;
        Ok(())
    }
}

pub fn parse_procedure(document: &str) -> Result<Vec<ProcedureStep>, ProcedureError> {
    let mut steps: Vec<(usize, ProcedureStep)> = Vec::new();
    let mut seen = HashSet::new();

    for (n, raw) in document.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| ProcedureError::MalformedStep {
            line: line_no,
            reason: reason.to_string(),
        };
        if let Some(rest) = line.strip_prefix("[STEP") {
            let (header, text) = rest
                .split_once(']')
                .ok_or_else(|| malformed("unterminated step header"))?;
            let mut parts = header.split_whitespace();
            let id = parts.next().ok_or_else(|| malformed("missing step id"))?;
            let kind = parts.next().ok_or_else(|| malformed("missing step kind"))?;
            if parts.next().is_some() {
                return Err(malformed("unexpected tokens in step header"));
            }
            let kind = kind.parse::<StepKind>().map_err(|e| malformed(&e))?;
            if !seen.insert(id.to_string()) {
                return Err(ProcedureError::DuplicateStep(id.to_string()));
            }
            steps.push((
                line_no,
                ProcedureStep {
                    id: id.to_string(),
                    text: text.trim().to_string(),
                    kind,
                    targets: Vec::new(),
                    expected_states: BTreeMap::new(),
                    lifecycle: Lifecycle::Pending,
                },
            ));
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| malformed("expected `target:` or `expect:` line"))?;
        let (_, step) = steps
            .last_mut()
            .ok_or_else(|| malformed("attribute line before any step header"))?;
        let value = value.trim();
        match key.trim() {
            "target" => {
                if value.is_empty() {
                    return Err(malformed("empty target"));
                }
                step.targets.push(value.to_string());
            }
            "expect" => {
                let (code, state) = value
                    .split_once('=')
                    .ok_or_else(|| malformed("expect needs `code=State`"))?;
                let state = state.parse::<ValveState>().map_err(|e| malformed(&e))?;
                step.expected_states.insert(code.trim().to_string(), state);
            }
            other => return Err(malformed(&format!("unknown attribute `{other}`"))),
        }
    }

    steps
        .into_iter()
        .map(|(line, step)| {
            if step.targets.is_empty() && step.kind != StepKind::Checklist {
                Err(ProcedureError::MalformedStep {
                    line,
                    reason: format!("step `{}` has no targets", step.id),
                })
            } else {
                Ok(step)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathNode {
    pub element_id: String,
    pub label: String,
    pub coords: Coords,
    /// Navigation action that reaches this node; `None` for the entry node.
    pub action: Option<NavAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPath {
    pub step_id: String,
    pub kind: StepKind,
    pub nodes: Vec<PathNode>,
    pub multi_action: bool,
    /// Expected-state checks the operator must read back.
    pub verifications: usize,
}

impl ExecutionPath {
    pub fn node_ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.element_id.as_str()).collect()
    }
}

fn resolve_target(step: &ProcedureStep, target: &str, graph: &InterfaceGraph) -> Result<String, ProcedureError> {
    if graph.get(target).is_some() {
        return Ok(target.to_string());
    }
    let pick = |matches: Vec<&str>| -> Option<Result<String, ProcedureError>> {
        match matches.as_slice() {
            [] => None,
            [one] => Some(Ok(one.to_string())),
            many => Some(Err(ProcedureError::AmbiguousTarget {
                step: step.id.clone(),
                target: target.to_string(),
                candidates: many.iter().map(|s| s.to_string()).collect(),
            })),
        }
    };
    let exact = graph
        .elements()
        .iter()
        .filter(|e| e.label == target)
        .map(|e| e.id.as_str())
        .collect();
    if let Some(found) = pick(exact) {
        return found;
    }
    let folded = graph
        .elements()
        .iter()
        .filter(|e| e.label.eq_ignore_ascii_case(target))
        .map(|e| e.id.as_str())
        .collect();
    pick(folded).unwrap_or_else(|| {
        Err(ProcedureError::UnresolvableTarget {
            step: step.id.clone(),
            target: target.to_string(),
        })
    })
}

/// Ground a step onto the graph: route through each target in order and
/// concatenate the hops, collapsing consecutive repeats.
pub fn compile_step(step: &ProcedureStep, graph: &InterfaceGraph) -> Result<ExecutionPath, ProcedureError> {
    let ids = step
        .targets
        .iter()
        .map(|t| resolve_target(step, t, graph))
        .collect::<Result<Vec<_>, _>>()?;

    let mut route: Vec<String> = Vec::new();
    if let Some(first) = ids.first() {
        route.push(first.clone());
    }
    for pair in ids.windows(2) {
        let hop = graph
            .resolve_path(&pair[0], &pair[1])
            .map_err(|source| ProcedureError::Routing {
                step: step.id.clone(),
                source,
            })?;
        route.extend(hop.into_iter().skip(1));
    }
    route.dedup();

    let mut nodes = Vec::with_capacity(route.len());
    let mut prev: Option<&str> = None;
    for id in &route {
        let el = graph.get(id).expect("resolved ids exist");
        nodes.push(PathNode {
            element_id: el.id.clone(),
            label: el.label.clone(),
            coords: el.coords(),
            action: prev.and_then(|p| graph.edge_action(p, id)),
        });
        prev = Some(id);
    }

    Ok(ExecutionPath {
        step_id: step.id.clone(),
        kind: step.kind,
        multi_action: nodes.len() > 1,
        nodes,
        verifications: step.expected_states.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub index: u32,
    pub valve_code: String,
    pub valve_name: String,
    pub expected: ValveState,
    #[serde(default)]
    pub actual: Option<ValveState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistMismatch {
    pub index: u32,
    pub valve_code: String,
    pub expected: ValveState,
    /// `None` when the valve was not observed at all.
    pub observed: Option<ValveState>,
}

fn is_plant_code(code: &str) -> bool {
    !code.is_empty() && code.chars().all(|c| c.is_ascii_alphanumeric())
}

#[derive(Deserialize)]
struct ChecklistRow {
    index: u32,
    valve_code: String,
    valve_name: String,
    expected: String,
}

pub fn parse_checklist(csv_text: &str) -> Result<Vec<ChecklistItem>, ProcedureError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut items = Vec::new();
    for row in reader.deserialize::<ChecklistRow>() {
        let row = row.map_err(|e| ProcedureError::Checklist(e.to_string()))?;
        if !is_plant_code(&row.valve_code) {
            return Err(ProcedureError::Checklist(format!(
                "row {}: `{}` is not an alphanumeric plant code",
                row.index, row.valve_code
            )));
        }
        let expected = row
            .expected
            .parse()
            .map_err(|e| ProcedureError::Checklist(format!("row {}: {e}", row.index)))?;
        items.push(ChecklistItem {
            index: row.index,
            valve_code: row.valve_code,
            valve_name: row.valve_name,
            expected,
            actual: None,
        });
    }
    Ok(items)
}

#[derive(Deserialize)]
struct ObservationRow {
    valve_code: String,
    observed: String,
}

/// Observed valve states, CSV with columns `valve_code,observed`.
pub fn parse_observations(csv_text: &str) -> Result<BTreeMap<String, ValveState>, ProcedureError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<ObservationRow>().enumerate() {
        let row = row.map_err(|e| ProcedureError::Checklist(e.to_string()))?;
        let state = row
            .observed
            .parse()
            .map_err(|e| ProcedureError::Checklist(format!("observation {}: {e}", i + 1)))?;
        if out.insert(row.valve_code.clone(), state).is_some() {
            return Err(ProcedureError::Checklist(format!(
                "observation {}: `{}` observed twice",
                i + 1,
                row.valve_code
            )));
        }
    }
    Ok(out)
}

pub fn verify_checklist(items: &[ChecklistItem], observed: &BTreeMap<String, ValveState>) -> Vec<ChecklistMismatch> {
    items
        .iter()
        .filter_map(|item| {
            let seen = observed.get(&item.valve_code).copied();
            (seen != Some(item.expected)).then(|| ChecklistMismatch {
                index: item.index,
                valve_code: item.valve_code.clone(),
                expected: item.expected,
                observed: seen,
            })
        })
        .collect()
}
