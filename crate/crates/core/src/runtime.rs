//! Observe, map, evaluate, gate. A single-writer state machine that owns the
//! procedure lifecycle, pending approvals and the audit log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditKind, AuditLog, AuditRecord, OperatorAction};
use crate::gate::{decide, fuse_step_hep, systemic_hep, GateDecision, GateError, GateInputs, Verdict};
use crate::perception::{
    window_features, CentroidDetector, EventDetector, EventLabel, PerceptionError, TelemetryFrame,
};
use crate::procedure::{compile_step, ExecutionPath, Lifecycle, ProcedureError, ProcedureStep};
use crate::risk::{p_c, AssessmentContext, FunctionHep, PifAssessor, PifState, RiskError, RuleAssessor};
use crate::scenario::Scenario;
use crate::twin::{compile_primitives, estimate_median, predict_workload, RunContext, TimeEstimate, TwinError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no procedure is active")]
    NotActive,
    #[error("cursor is past the last step")]
    NoCurrentStep,
    #[error("step `{0}` is already executed")]
    AlreadyExecuted(String),
    #[error("step `{0}` has not been executed")]
    StepNotExecuted(String),
    #[error("step `{0}` has not been evaluated")]
    NotEvaluated(String),
    #[error("step `{step}` has verdict {verdict}; execution needs an approval")]
    ApprovalRequired { step: String, verdict: Verdict },
    #[error("step `{step}` already has live approval `{approval_id}`")]
    ApprovalPending { step: String, approval_id: String },
    #[error("unknown approval `{0}`")]
    UnknownApproval(String),
    #[error("approval `{approval_id}` expired at tick {expires_at}")]
    ExpiredApproval { approval_id: String, expires_at: u64 },
    #[error("frame at tick {found} does not follow clock {clock}")]
    NonMonotonicTime { clock: u64, found: u64 },
    #[error("frame carries {found} values, calibration expects {expected}")]
    FrameWidth { expected: usize, found: usize },
    #[error("step `{step}`: {source}")]
    Procedure {
        step: String,
        #[source]
        source: ProcedureError,
    },
    #[error("step `{step}`: {source}")]
    Twin {
        step: String,
        #[source]
        source: TwinError,
    },
    #[error("step `{step}`: {source}")]
    Risk {
        step: String,
        #[source]
        source: RiskError,
    },
    #[error("step `{step}`: {source}")]
    Gate {
        step: String,
        #[source]
        source: GateError,
    },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    EventActive,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub step_id: String,
    pub p_t: f64,
    pub p_c: f64,
    pub step_hep: f64,
    pub workload_score: f64,
    pub confusion: bool,
    pub action_risk: f64,
    pub decision: GateDecision,
    pub median_s: f64,
    pub t_avail_s: f64,
    pub pifs: PifState,
    pub functions: Vec<FunctionHep>,
    pub evidence: BTreeMap<String, String>,
    pub evaluated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovalToken {
    pub approval_id: String,
    /// 1-based issue order within a run.
    pub ordinal: u64,
    pub step_id: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingApproval {
    pub token: ApprovalToken,
    pub assessment: RiskAssessment,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveProcedure {
    pub event_id: String,
    pub name: String,
    pub steps: Vec<ProcedureStep>,
    pub cursor: usize,
    /// Latest assessment per step, indexed like `steps`.
    pub assessments: Vec<Option<RiskAssessment>>,
    pub executed_heps: Vec<(String, f64)>,
    /// Set when the operator rejects a gated step; cleared by the next
    /// evaluation.
    pub rejected: bool,
}

impl ActiveProcedure {
    pub fn current(&self) -> Option<&ProcedureStep> {
        self.steps.get(self.cursor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeState {
    pub mode: Mode,
    pub active_event: Option<EventLabel>,
    pub active_procedure: Option<ActiveProcedure>,
    pub pending_approvals: BTreeMap<String, PendingApproval>,
    pub clock: u64,
    pub systemic_hep: f64,
}

impl RuntimeState {
    fn idle() -> Self {
        Self {
            mode: Mode::Idle,
            active_event: None,
            active_procedure: None,
            pending_approvals: BTreeMap::new(),
            clock: 0,
            systemic_hep: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    NoEvent,
    Activated(EventLabel),
    UnknownEvent(EventLabel),
}

/// Result of feeding a batch. `consumed` counts frames taken before the
/// runtime stopped reading, which happens on activation.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub consumed: usize,
    pub outcome: TickOutcome,
}

pub struct Runtime {
    scenario: Arc<Scenario>,
    assessor: Box<dyn PifAssessor>,
    detector: Box<dyn EventDetector>,
    state: RuntimeState,
    audit: AuditLog,
    window: VecDeque<TelemetryFrame>,
    reported_unknown: BTreeSet<String>,
    issued: u64,
    expired: BTreeMap<String, u64>,
}

impl Runtime {
    pub fn new(scenario: Arc<Scenario>, audit: AuditLog) -> Self {
        let assessor = Box::new(RuleAssessor::new(scenario.pif_model.assessor.clone()));
        let detector = Box::new(CentroidDetector {
            signatures: scenario.signatures.signatures.clone(),
        });
        Self::with_parts(scenario, audit, assessor, detector)
    }

    pub fn with_parts(
        scenario: Arc<Scenario>,
        audit: AuditLog,
        assessor: Box<dyn PifAssessor>,
        detector: Box<dyn EventDetector>,
    ) -> Self {
        Self {
            scenario,
            assessor,
            detector,
            state: RuntimeState::idle(),
            audit,
            window: VecDeque::new(),
            reported_unknown: BTreeSet::new(),
            issued: 0,
            expired: BTreeMap::new(),
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn state(&self) -> &RuntimeState {
        &self.state
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }

    fn record(&mut self, record: AuditRecord) {
        let tick = self.state.clock;
        self.audit.append(record, tick);
    }

    fn procedure(&self) -> Result<&ActiveProcedure, RuntimeError> {
        self.state.active_procedure.as_ref().ok_or(RuntimeError::NotActive)
    }

    fn procedure_mut(&mut self) -> Result<&mut ActiveProcedure, RuntimeError> {
        self.state.active_procedure.as_mut().ok_or(RuntimeError::NotActive)
    }

    /// Feed frames in calibration column order. Perception only runs in
    /// `Idle`; other modes just move the clock.
    pub fn tick(&mut self, frames: &[TelemetryFrame]) -> Result<TickReport, RuntimeError> {
        let width = self.scenario.calibration.parameters.len();
        let window_len = self.scenario.config.window_len;
        for (i, frame) in frames.iter().enumerate() {
            if frame.values.len() != width {
                return Err(RuntimeError::FrameWidth {
                    expected: width,
                    found: frame.values.len(),
                });
            }
            if !self.window.is_empty() && frame.time <= self.state.clock {
                return Err(RuntimeError::NonMonotonicTime {
                    clock: self.state.clock,
                    found: frame.time,
                });
            }
            self.advance_clock(frame.time);
            if self.state.mode != Mode::Idle {
                continue;
            }
            self.window.push_back(frame.clone());
            if self.window.len() > window_len {
                self.window.pop_front();
            }
            if self.window.len() < window_len {
                continue;
            }
            let frames: Vec<TelemetryFrame> = self.window.iter().cloned().collect();
            let features = window_features(&frames, window_len, &self.scenario.calibration)?;
            let Some(label) = self.detector.detect(&features, frame.time)? else {
                continue;
            };
            let consumed = i + 1;
            if self.scenario.procedures.contains_key(&label.event_id) {
                self.activate(label.clone());
                return Ok(TickReport {
                    consumed,
                    outcome: TickOutcome::Activated(label),
                });
            }
            if self.reported_unknown.insert(label.event_id.clone()) {
                let mut r = AuditRecord::new(AuditKind::UnknownEvent)
                    .detail(format!("{} has no procedure mapping", label.name));
                r.event_id = Some(label.event_id.clone());
                self.record(r);
                return Ok(TickReport {
                    consumed,
                    outcome: TickOutcome::UnknownEvent(label),
                });
            }
        }
        Ok(TickReport {
            consumed: frames.len(),
            outcome: TickOutcome::NoEvent,
        })
    }

    fn activate(&mut self, label: EventLabel) {
        let binding = &self.scenario.procedures[&label.event_id];
        let steps = binding.steps.clone();
        let n = steps.len();
        let mut r = AuditRecord::new(AuditKind::EventDetected).detail(format!("{} -> {}", label.name, binding.name));
        r.event_id = Some(label.event_id.clone());
        self.state.active_procedure = Some(ActiveProcedure {
            event_id: label.event_id.clone(),
            name: binding.name.clone(),
            steps,
            cursor: 0,
            assessments: vec![None; n],
            executed_heps: Vec::new(),
            rejected: false,
        });
        self.state.active_event = Some(label);
        self.state.mode = Mode::EventActive;
        self.window.clear();
        self.record(r);
    }

    /// Move the clock forward and expire stale approvals.
    pub fn advance_clock(&mut self, tick: u64) {
        if tick > self.state.clock {
            self.state.clock = tick;
        }
        let now = self.state.clock;
        let stale: Vec<String> = self
            .state
            .pending_approvals
            .iter()
            .filter(|(_, p)| p.token.expires_at <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in stale {
            let p = self.state.pending_approvals.remove(&id).expect("listed");
            self.expired.insert(id.clone(), p.token.expires_at);
            let r = AuditRecord::new(AuditKind::ApprovalExpired)
                .step(&p.token.step_id)
                .approval(&id)
                .detail(format!("expired at tick {}", p.token.expires_at));
            self.record(r);
        }
    }

    /// Time available for the current step per the scenario binding.
    pub fn current_t_avail(&self) -> Result<f64, RuntimeError> {
        let proc_ = self.procedure()?;
        let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?;
        Ok(self.scenario.procedures[&proc_.event_id].t_avail(&step.id))
    }

    pub fn live_token(&self, step_id: &str) -> Option<&ApprovalToken> {
        self.state
            .pending_approvals
            .values()
            .map(|p| &p.token)
            .find(|t| t.step_id == step_id)
    }

    /// Compile the path for a step of the active procedure.
    pub fn compile_current(&self) -> Result<ExecutionPath, RuntimeError> {
        let proc_ = self.procedure()?;
        let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?;
        compile_step(step, &self.scenario.graph).map_err(|source| RuntimeError::Procedure {
            step: step.id.clone(),
            source,
        })
    }

    pub fn evaluate_current_step(&mut self, t_avail_s: f64) -> Result<RiskAssessment, RuntimeError> {
        let (step, pending, confusion) = {
            let proc_ = self.procedure()?;
            let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?.clone();
            let binding = &self.scenario.procedures[&proc_.event_id];
            (
                step.clone(),
                proc_.steps.len() - proc_.cursor,
                binding.confusion.contains(&step.id),
            )
        };
        if step.lifecycle == Lifecycle::Executed {
            return Err(RuntimeError::AlreadyExecuted(step.id));
        }
        if let Some(t) = self.live_token(&step.id) {
            return Err(RuntimeError::ApprovalPending {
                step: step.id.clone(),
                approval_id: t.approval_id.clone(),
            });
        }
        let assessment = assess_step(
            &self.scenario,
            self.assessor.as_ref(),
            &step,
            pending,
            confusion,
            t_avail_s,
            self.state.clock,
        )?;

        if step.lifecycle == Lifecycle::Pending {
            let proc_ = self.procedure_mut()?;
            let cursor = proc_.cursor;
            proc_.steps[cursor]
                .mark_intended()
                .map_err(|source| RuntimeError::Procedure {
                    step: step.id.clone(),
                    source,
                })?;
            self.record(AuditRecord::new(AuditKind::StepIntended).step(&step.id));
        }

        let token = assessment.decision.approval_required.then(|| {
            self.issued += 1;
            ApprovalToken {
                approval_id: format!("apr-{:04}", self.issued),
                ordinal: self.issued,
                step_id: step.id.clone(),
                expires_at: self.state.clock + self.scenario.config.approval_expiry_ticks,
            }
        });

        let mut r = AuditRecord::new(AuditKind::StepEvaluated).step(&step.id);
        r.p_t = Some(assessment.p_t);
        r.p_c = Some(assessment.p_c);
        r.step_hep = Some(assessment.step_hep);
        r.action_risk = Some(assessment.action_risk);
        r.verdict = Some(assessment.decision.verdict);
        r.explanation = assessment.decision.explanation.clone();
        r.approval_id = token.as_ref().map(|t| t.approval_id.clone());
        self.record(r);

        if let Some(token) = token {
            self.state.pending_approvals.insert(
                token.approval_id.clone(),
                PendingApproval {
                    token,
                    assessment: assessment.clone(),
                    issued_at: self.state.clock,
                },
            );
        }
        let proc_ = self.procedure_mut()?;
        let cursor = proc_.cursor;
        proc_.assessments[cursor] = Some(assessment.clone());
        proc_.rejected = false;
        Ok(assessment)
    }

    /// Execute the current step on the strength of an `Allow` verdict.
    pub fn execute_allowed(&mut self) -> Result<(), RuntimeError> {
        let proc_ = self.procedure()?;
        let cursor = proc_.cursor;
        let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?;
        let assessment = proc_.assessments[cursor]
            .as_ref()
            .ok_or_else(|| RuntimeError::NotEvaluated(step.id.clone()))?;
        if assessment.decision.verdict != Verdict::Allow {
            return Err(RuntimeError::ApprovalRequired {
                step: step.id.clone(),
                verdict: assessment.decision.verdict,
            });
        }
        self.mark_executed(cursor, None)
    }

    fn mark_executed(&mut self, index: usize, approval_id: Option<&str>) -> Result<(), RuntimeError> {
        let proc_ = self.procedure_mut()?;
        let step = &mut proc_.steps[index];
        let id = step.id.clone();
        step.mark_executed().map_err(|source| RuntimeError::Procedure {
            step: id.clone(),
            source,
        })?;
        let hep = proc_.assessments[index].as_ref().map(|a| a.step_hep).unwrap_or(0.0);
        proc_.executed_heps.push((id.clone(), hep));
        let mut r = AuditRecord::new(AuditKind::StepExecuted).step(&id);
        r.step_hep = Some(hep);
        if let Some(aid) = approval_id {
            r = r.by_human(OperatorAction::Approved).approval(aid);
        }
        self.record(r);
        Ok(())
    }

    pub fn submit_approval(&mut self, approval_id: &str, decision: Decision) -> Result<(), RuntimeError> {
        let now = self.state.clock;
        let Some(pending) = self.state.pending_approvals.get(approval_id) else {
            return Err(if let Some(&expires_at) = self.expired.get(approval_id) {
                RuntimeError::ExpiredApproval {
                    approval_id: approval_id.to_string(),
                    expires_at,
                }
            } else {
                RuntimeError::UnknownApproval(approval_id.to_string())
            });
        };
        if pending.token.expires_at <= now {
            let expires_at = pending.token.expires_at;
            self.advance_clock(now);
            return Err(RuntimeError::ExpiredApproval {
                approval_id: approval_id.to_string(),
                expires_at,
            });
        }
        let pending = self.state.pending_approvals.remove(approval_id).expect("present");
        let step_id = pending.token.step_id.clone();
        let action = match decision {
            Decision::Approved => OperatorAction::Approved,
            Decision::Rejected => OperatorAction::Rejected,
        };
        let mut r = AuditRecord::new(AuditKind::ApprovalDecision)
            .step(&step_id)
            .approval(approval_id)
            .by_human(action);
        r.verdict = Some(pending.assessment.decision.verdict);
        r.action_risk = Some(pending.assessment.action_risk);
        self.record(r);

        let index = self
            .procedure()?
            .steps
            .iter()
            .position(|s| s.id == step_id)
            .expect("token step belongs to the active procedure");
        match decision {
            Decision::Approved => self.mark_executed(index, Some(approval_id)),
            Decision::Rejected => {
                self.procedure_mut()?.rejected = true;
                Ok(())
            }
        }
    }

    pub fn advance(&mut self) -> Result<(), RuntimeError> {
        let proc_ = self.procedure()?;
        let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?;
        if step.lifecycle != Lifecycle::Executed {
            return Err(RuntimeError::StepNotExecuted(step.id.clone()));
        }
        let step_id = step.id.clone();
        let heps: Vec<f64> = proc_.executed_heps.iter().map(|(_, h)| *h).collect();
        let systemic = systemic_hep(&heps);
        let proc_ = self.procedure_mut()?;
        proc_.cursor += 1;
        let done = proc_.cursor == proc_.steps.len();
        let name = proc_.name.clone();
        self.state.systemic_hep = systemic;
        let mut r = AuditRecord::new(AuditKind::StepAdvanced).step(&step_id);
        r.systemic_hep = Some(systemic);
        self.record(r);
        if done {
            self.state.mode = Mode::Completed;
            let mut r = AuditRecord::new(AuditKind::ProcedureCompleted).detail(name);
            r.systemic_hep = Some(systemic);
            self.record(r);
        }
        Ok(())
    }

    pub fn into_parts(self) -> (RuntimeState, AuditLog) {
        (self.state, self.audit)
    }
}

/// The pure part of step evaluation: path, P_t, workload, PIFs, P_c, fusion
/// and the gate. No state is touched.
pub fn assess_step(
    scenario: &Scenario,
    assessor: &dyn PifAssessor,
    step: &ProcedureStep,
    pending_steps: usize,
    confusion: bool,
    t_avail_s: f64,
    at_tick: u64,
) -> Result<RiskAssessment, RuntimeError> {
    let id = || step.id.clone();
    let path = compile_step(step, &scenario.graph).map_err(|source| RuntimeError::Procedure { step: id(), source })?;
    let twin_err = |source| RuntimeError::Twin { step: id(), source };
    let primitives = compile_primitives(&path, &scenario.timing).map_err(twin_err)?;
    let median_s = estimate_median(&primitives, &scenario.timing).map_err(twin_err)?;
    let estimate = TimeEstimate::new(median_s, scenario.timing.sigma).map_err(twin_err)?;
    let p_t = estimate.p_t(t_avail_s);

    let ratio = median_s / t_avail_s;
    let workload = predict_workload(
        &RunContext {
            path_len: path.nodes.len(),
            time_pressure_ratio: ratio,
            pending_steps,
        },
        &scenario.timing.workload,
    );
    let workload_score = workload.aggregate();

    let ctx = AssessmentContext {
        step,
        path: &path,
        workload_score,
        time_pressure_ratio: ratio,
    };
    let deadline = Duration::from_millis(scenario.config.assessor_deadline_ms);
    let started = Instant::now();
    let pifs = assessor
        .assess(&ctx, deadline)
        .and_then(|p| {
            if started.elapsed() > deadline {
                Err(RiskError::DeadlineExceeded(deadline))
            } else {
                Ok(p)
            }
        })
        .map_err(|source| RuntimeError::Risk { step: id(), source })?;
    let failure =
        p_c(step.kind, &pifs, &scenario.pif_model).map_err(|source| RuntimeError::Risk { step: id(), source })?;

    let step_hep = fuse_step_hep(p_t, failure.p_c);
    let inputs = GateInputs {
        p_t,
        p_c: failure.p_c,
        workload_score,
        confusion,
    };
    let gate_err = |source| RuntimeError::Gate { step: id(), source };
    let inference = scenario.gate.assess(&inputs).map_err(gate_err)?;
    let factors = scenario.gate.explain(&inputs, &pifs, &inference);
    let decision = decide(inference.action_risk, &scenario.gate.thresholds, factors).map_err(gate_err)?;

    Ok(RiskAssessment {
        step_id: id(),
        p_t,
        p_c: failure.p_c,
        step_hep,
        workload_score,
        confusion,
        action_risk: inference.action_risk,
        decision,
        median_s,
        t_avail_s,
        pifs,
        functions: failure.functions,
        evidence: inference.evidence,
        evaluated_at: at_tick,
    })
}
