//! Append-only audit trail.
//!
//! Every runtime transition appends at least one record. Records carry
//! ticks rather than wall-clock time, so replaying identical inputs yields
//! a byte-identical JSON-lines log.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::{Factor, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    EventDetected,
    UnknownEvent,
    StepIntended,
    StepEvaluated,
    ApprovalDecision,
    ApprovalExpired,
    StepExecuted,
    StepAdvanced,
    ProcedureCompleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorAction {
    #[default]
    None,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    #[default]
    System,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub tick: u64,
    pub kind: AuditKind,
    pub step_id: Option<String>,
    pub p_t: Option<f64>,
    pub p_c: Option<f64>,
    pub step_hep: Option<f64>,
    pub action_risk: Option<f64>,
    pub verdict: Option<Verdict>,
    pub explanation: Vec<Factor>,
    pub operator_action: OperatorAction,
    pub actor: Actor,
    pub approval_id: Option<String>,
    pub event_id: Option<String>,
    pub systemic_hep: Option<f64>,
    pub detail: Option<String>,
}

impl AuditRecord {
    pub fn new(kind: AuditKind) -> Self {
        Self {
            seq: 0,
            tick: 0,
            kind,
            step_id: None,
            p_t: None,
            p_c: None,
            step_hep: None,
            action_risk: None,
            verdict: None,
            explanation: Vec::new(),
            operator_action: OperatorAction::None,
            actor: Actor::System,
            approval_id: None,
            event_id: None,
            systemic_hep: None,
            detail: None,
        }
    }

    pub fn step(mut self, step_id: &str) -> Self {
        self.step_id = Some(step_id.to_string());
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn by_human(mut self, action: OperatorAction) -> Self {
        self.actor = Actor::Human;
        self.operator_action = action;
        self
    }

    pub fn approval(mut self, approval_id: &str) -> Self {
        self.approval_id = Some(approval_id.to_string());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serializes")
    }
}

/// In-memory log with an optional JSON-lines sink. `append` assigns the
/// sequence number; callers never set it.
#[derive(Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<Box<dyn Write + Send>>,
    sink_error: Option<io::Error>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("records", &self.records.len())
            .field("sink", &self.sink.is_some())
            .finish()
    }
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self {
            sink: Some(sink),
            ..Self::default()
        }
    }

    pub fn append(&mut self, mut record: AuditRecord, tick: u64) -> &AuditRecord {
        record.seq = self.records.len() as u64 + 1;
        record.tick = tick;
        if let Some(sink) = self.sink.as_mut() {
            if self.sink_error.is_none() {
                if let Err(e) = writeln!(sink, "{}", record.to_json_line()) {
                    tracing::error!("audit sink write failed: {e}");
                    self.sink_error = Some(e);
                }
            }
        }
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn since(&self, seq: u64) -> &[AuditRecord] {
        let start = (seq as usize).min(self.records.len());
        &self.records[start..]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(e) = self.sink_error.take() {
            return Err(e);
        }
        match self.sink.as_mut() {
            Some(s) => s.flush(),
            None => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }
}

pub fn to_jsonl(records: &[AuditRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<AuditRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum AuditViolation {
    #[error("record {index}: seq {found}, expected {expected}")]
    SequenceGap { index: usize, expected: u64, found: u64 },
    #[error("record seq {seq}: step `{step}` executed after a {verdict} verdict without a matching human approval")]
    UnapprovedExecution { seq: u64, step: String, verdict: Verdict },
    #[error("record seq {seq}: step `{step}` executed without any evaluation")]
    UnevaluatedExecution { seq: u64, step: String },
}

/// Sequence numbers start at 1 and have no gaps.
pub fn check_sequence(records: &[AuditRecord]) -> Result<(), AuditViolation> {
    for (i, r) in records.iter().enumerate() {
        let expected = i as u64 + 1;
        if r.seq != expected {
            return Err(AuditViolation::SequenceGap {
                index: i,
                expected,
                found: r.seq,
            });
        }
    }
    Ok(())
}

/// Replay the trail and confirm that no step whose latest verdict was
/// `Suggest` or `Block` reached execution without a human approval of the
/// token issued for that verdict.
pub fn check_authority(records: &[AuditRecord]) -> Result<(), AuditViolation> {
    struct Latest {
        verdict: Verdict,
        approval_id: Option<String>,
        approved: bool,
    }
    let mut latest: BTreeMap<&str, Latest> = BTreeMap::new();
    for r in records {
        let Some(step) = r.step_id.as_deref() else {
            continue;
        };
        match r.kind {
            AuditKind::StepEvaluated => {
                latest.insert(
                    step,
                    Latest {
                        verdict: r.verdict.unwrap_or(Verdict::Block),
                        approval_id: r.approval_id.clone(),
                        approved: false,
                    },
                );
            }
            AuditKind::ApprovalDecision => {
                if let Some(l) = latest.get_mut(step) {
                    let matches = l.approval_id.is_some() && l.approval_id == r.approval_id;
                    if matches && r.actor == Actor::Human && r.operator_action == OperatorAction::Approved {
                        l.approved = true;
                    }
                }
            }
            AuditKind::StepExecuted => {
                let l = latest.get(step).ok_or_else(|| AuditViolation::UnevaluatedExecution {
                    seq: r.seq,
                    step: step.to_string(),
                })?;
                if l.verdict != Verdict::Allow && !(l.approved && r.approval_id == l.approval_id) {
                    return Err(AuditViolation::UnapprovedExecution {
                        seq: r.seq,
                        step: step.to_string(),
                        verdict: l.verdict,
                    });
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Step HEPs of executed steps, each taken from that step's latest
/// evaluation, in execution order.
pub fn executed_step_heps(records: &[AuditRecord]) -> Vec<(String, f64)> {
    let mut last_eval: BTreeMap<&str, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        let Some(step) = r.step_id.as_deref() else {
            continue;
        };
        match r.kind {
            AuditKind::StepEvaluated => {
                if let Some(h) = r.step_hep {
                    last_eval.insert(step, h);
                }
            }
            AuditKind::StepExecuted => {
                if let Some(h) = last_eval.get(step) {
                    out.push((step.to_string(), *h));
                }
            }
            _ => {}
        }
    }
    out
}
