//! Drives a runtime from recorded telemetry. The same driver backs the
//! headless replay and the served runtime, so both produce the same trail.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::gate::Verdict;
use crate::perception::{EventLabel, Telemetry, TelemetryFrame};
use crate::procedure::Lifecycle;
use crate::runtime::{ApprovalToken, Decision, Mode, Runtime, RuntimeError};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub enum DriverStatus {
    /// Some work was done; pump again.
    Progressed,
    AwaitingApproval(ApprovalToken),
    /// Allow verdict, manual execution configured.
    AwaitingExecution(String),
    /// The operator rejected a gated step.
    Halted(String),
    /// Procedure completed, or telemetry ran out without an event.
    Finished,
}

pub struct ReplayDriver {
    frames: Vec<TelemetryFrame>,
    next: usize,
    batch: usize,
    auto_execute: bool,
}

impl ReplayDriver {
    /// `telemetry` is projected onto the calibration schema.
    pub fn new(scenario: &Scenario, telemetry: &Telemetry) -> Result<Self, RuntimeError> {
        let stream = telemetry.project(&scenario.calibration.names())?;
        Ok(Self {
            frames: stream.frames,
            next: 0,
            batch: scenario.config.batch_frames,
            auto_execute: scenario.config.auto_execute_allow,
        })
    }

    pub fn frames_remaining(&self) -> usize {
        self.frames.len() - self.next
    }

    pub fn pump(&mut self, rt: &mut Runtime) -> Result<DriverStatus, RuntimeError> {
        match rt.state().mode {
            Mode::Completed => return Ok(DriverStatus::Finished),
            Mode::Idle => {
                if self.next == self.frames.len() {
                    return Ok(DriverStatus::Finished);
                }
                let end = (self.next + self.batch).min(self.frames.len());
                let report = rt.tick(&self.frames[self.next..end])?;
                self.next += report.consumed;
                return Ok(DriverStatus::Progressed);
            }
            Mode::EventActive => {}
        }

        let proc_ = rt.state().active_procedure.as_ref().ok_or(RuntimeError::NotActive)?;
        let step = proc_.current().ok_or(RuntimeError::NoCurrentStep)?;
        let step_id = step.id.clone();
        if proc_.rejected {
            return Ok(DriverStatus::Halted(step_id));
        }
        if step.lifecycle == Lifecycle::Executed {
            rt.advance()?;
            return Ok(DriverStatus::Progressed);
        }
        if let Some(token) = rt.live_token(&step_id) {
            return Ok(DriverStatus::AwaitingApproval(token.clone()));
        }
        let latest_allow = proc_.assessments[proc_.cursor]
            .as_ref()
            .is_some_and(|a| a.decision.verdict == Verdict::Allow);
        if latest_allow {
            if !self.auto_execute {
                return Ok(DriverStatus::AwaitingExecution(step_id));
            }
            rt.execute_allowed()?;
            return Ok(DriverStatus::Progressed);
        }

        let t_avail = rt.current_t_avail()?;
        let assessment = rt.evaluate_current_step(t_avail)?;
        if assessment.decision.verdict == Verdict::Allow && self.auto_execute {
            rt.execute_allowed()?;
        }
        Ok(DriverStatus::Progressed)
    }

    /// Pump until the runtime needs outside input or finishes.
    pub fn run_until_blocked(&mut self, rt: &mut Runtime) -> Result<DriverStatus, RuntimeError> {
        loop {
            match self.pump(rt)? {
                DriverStatus::Progressed => continue,
                other => return Ok(other),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDecision {
    /// Matches `ApprovalToken::ordinal`.
    pub ordinal: u64,
    pub decision: Decision,
    /// Ticks that elapse before the decision is submitted.
    #[serde(default)]
    pub delay_ticks: u64,
}

/// Scripted operator. Either a bare list of decisions, or an object with a
/// `default` applied to ordinals the list does not cover.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "ScriptFile")]
pub struct ApprovalScript {
    pub default: Option<Decision>,
    pub decisions: Vec<ScriptedDecision>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    List(Vec<ScriptedDecision>),
    Full {
        #[serde(default)]
        default: Option<Decision>,
        #[serde(default)]
        decisions: Vec<ScriptedDecision>,
    },
}

impl From<ScriptFile> for ApprovalScript {
    fn from(f: ScriptFile) -> Self {
        match f {
            ScriptFile::List(decisions) => Self {
                default: None,
                decisions,
            },
            ScriptFile::Full { default, decisions } => Self { default, decisions },
        }
    }
}

impl ApprovalScript {
    pub fn all(decision: Decision) -> Self {
        Self {
            default: Some(decision),
            decisions: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn lookup(&self, ordinal: u64) -> Option<(Decision, u64)> {
        self.decisions
            .iter()
            .find(|d| d.ordinal == ordinal)
            .map(|d| (d.decision, d.delay_ticks))
            .or_else(|| self.default.map(|d| (d, 0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    NoEvent,
    Halted { step_id: String },
    AwaitingApproval { approval_id: String, ordinal: u64 },
    AwaitingExecution { step_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step_id: String,
    pub p_t: f64,
    pub p_c: f64,
    pub step_hep: f64,
    pub action_risk: f64,
    pub verdict: Verdict,
    pub lifecycle: Lifecycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub detected_event: Option<EventLabel>,
    pub procedure: Option<String>,
    /// One row per evaluated step, using its latest evaluation.
    pub steps: Vec<StepRow>,
    pub systemic_hep: f64,
    pub run: RunStatus,
    pub audit_records: usize,
    pub audit_path: Option<String>,
}

impl RunReport {
    pub fn from_runtime(rt: &Runtime, run: RunStatus) -> Self {
        let state = rt.state();
        let proc_ = state.active_procedure.as_ref();
        let steps = proc_
            .map(|p| {
                p.steps
                    .iter()
                    .zip(&p.assessments)
                    .filter_map(|(s, a)| {
                        a.as_ref().map(|a| StepRow {
                            step_id: s.id.clone(),
                            p_t: a.p_t,
                            p_c: a.p_c,
                            step_hep: a.step_hep,
                            action_risk: a.action_risk,
                            verdict: a.decision.verdict,
                            lifecycle: s.lifecycle,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            scenario_id: rt.scenario().config.id.clone(),
            detected_event: state.active_event.clone(),
            procedure: proc_.map(|p| p.name.clone()),
            steps,
            systemic_hep: state.systemic_hep,
            run,
            audit_records: rt.audit().len(),
            audit_path: None,
        }
    }
}

/// Full headless pipeline. Returns the report and the finished runtime.
pub fn run_headless(
    scenario: Arc<Scenario>,
    telemetry: &Telemetry,
    script: &ApprovalScript,
    audit: AuditLog,
) -> Result<(RunReport, Runtime), RuntimeError> {
    let mut driver = ReplayDriver::new(&scenario, telemetry)?;
    let mut rt = Runtime::new(scenario, audit);
    let run = loop {
        match driver.run_until_blocked(&mut rt)? {
            DriverStatus::Progressed => unreachable!("run_until_blocked never yields Progressed"),
            DriverStatus::Finished => {
                break if rt.state().mode == Mode::Completed {
                    RunStatus::Completed
                } else {
                    RunStatus::NoEvent
                };
            }
            DriverStatus::Halted(step_id) => break RunStatus::Halted { step_id },
            DriverStatus::AwaitingExecution(step_id) => break RunStatus::AwaitingExecution { step_id },
            DriverStatus::AwaitingApproval(token) => {
                let Some((decision, delay)) = script.lookup(token.ordinal) else {
                    break RunStatus::AwaitingApproval {
                        approval_id: token.approval_id,
                        ordinal: token.ordinal,
                    };
                };
                let now = rt.state().clock;
                rt.advance_clock(now + delay);
                match rt.submit_approval(&token.approval_id, decision) {
                    Ok(()) | Err(RuntimeError::ExpiredApproval { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    };
    let _ = rt.audit_mut().flush();
    Ok((RunReport::from_runtime(&rt, run), rt))
}
