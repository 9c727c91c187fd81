//! Wire types of the HTTP interface, shared by server and client.

use serde::{Deserialize, Serialize};

use crate::audit::AuditRecord;
use crate::procedure::{ExecutionPath, ProcedureStep};
use crate::replay::DriverStatus;
use crate::runtime::{ApprovalToken, Decision, RiskAssessment, RuntimeState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DriverView {
    /// Replay not started, or still reading telemetry.
    Idle,
    AwaitingApproval {
        token: ApprovalToken,
    },
    AwaitingExecution {
        step_id: String,
    },
    Halted {
        step_id: String,
    },
    Finished,
}

impl From<&DriverStatus> for DriverView {
    fn from(s: &DriverStatus) -> Self {
        match s {
            DriverStatus::Progressed => Self::Idle,
            DriverStatus::AwaitingApproval(token) => Self::AwaitingApproval { token: token.clone() },
            DriverStatus::AwaitingExecution(step_id) => Self::AwaitingExecution {
                step_id: step_id.clone(),
            },
            DriverStatus::Halted(step_id) => Self::Halted {
                step_id: step_id.clone(),
            },
            DriverStatus::Finished => Self::Finished,
        }
    }
}

/// `GET /state`: the runtime state plus where the driver stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    #[serde(flatten)]
    pub state: RuntimeState,
    pub driver: DriverView,
    pub audit_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    #[serde(flatten)]
    pub step: ProcedureStep,
    /// Compiled path; absent when the step does not compile.
    pub path: Option<ExecutionPath>,
    pub assessment: Option<RiskAssessment>,
}

/// `GET /procedure`. Before an event, the bound procedure is shown with
/// `active = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureView {
    pub active: bool,
    pub event_id: String,
    pub name: String,
    pub cursor: usize,
    pub steps: Vec<StepView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovalResponse {
    pub approval_id: String,
    pub decision: Decision,
    pub driver: DriverView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable code, e.g. `unknown_approval`.
    pub error: String,
    pub message: String,
}

/// One message of the `GET /events` stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum ServerEvent {
    Audit(AuditRecord),
    Risk(RiskAssessment),
}

impl ServerEvent {
    /// SSE event name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Audit(_) => "audit",
            Self::Risk(_) => "risk",
        }
    }
}
