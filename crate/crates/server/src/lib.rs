//! HTTP service over one runtime. A single writer thread owns the runtime and
//! applies commands in arrival order; request handlers read published
//! snapshots and never touch the runtime directly.

use std::convert::Infallible;
use std::future::Future;
use std::io::Write;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};

use procgate_core::api::{
    ApprovalRequest, ApprovalResponse, DriverView, ErrorBody, ProcedureView, ServerEvent, StateView, StepView,
};
use procgate_core::audit::{AuditKind, AuditLog, AuditRecord};
use procgate_core::perception::Telemetry;
use procgate_core::procedure::compile_step;
use procgate_core::replay::ReplayDriver;
use procgate_core::runtime::{Decision, RiskAssessment, Runtime, RuntimeError};
use procgate_core::scenario::Scenario;

const EVENT_CAPACITY: usize = 4096;
const COMMAND_CAPACITY: usize = 64;

pub struct ServerConfig {
    pub scenario: Arc<Scenario>,
    pub telemetry: Telemetry,
    pub audit_sink: Option<Box<dyn Write + Send>>,
    /// Start the replay without waiting for `POST /run`.
    pub autorun: bool,
}

type Reply<T> = oneshot::Sender<Result<T, RuntimeError>>;

enum Command {
    Run(Reply<DriverView>),
    Evaluate(Reply<RiskAssessment>),
    Execute(Reply<DriverView>),
    Approve {
        approval_id: String,
        decision: Decision,
        reply: Reply<ApprovalResponse>,
    },
}

struct Snapshot {
    state: StateView,
    procedure: ProcedureView,
    audit: Vec<AuditRecord>,
}

/// Cheap handle shared by all request handlers.
#[derive(Clone)]
pub struct AppState {
    commands: mpsc::Sender<Command>,
    snapshot: Arc<RwLock<Snapshot>>,
    events: broadcast::Sender<ServerEvent>,
}

struct Writer {
    rt: Runtime,
    driver: ReplayDriver,
    running: bool,
    driver_view: DriverView,
    published: usize,
    snapshot: Arc<RwLock<Snapshot>>,
    events: broadcast::Sender<ServerEvent>,
}

impl Writer {
    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Run(reply) => {
                self.running = true;
                let r = self.drive();
                self.publish();
                let _ = reply.send(r);
            }
            Command::Evaluate(reply) => {
                let r = self
                    .rt
                    .current_t_avail()
                    .and_then(|t| self.rt.evaluate_current_step(t))
                    .and_then(|a| self.drive().map(|_| a));
                self.publish();
                let _ = reply.send(r);
            }
            Command::Execute(reply) => {
                let r = self.rt.execute_allowed().and_then(|_| self.drive());
                self.publish();
                let _ = reply.send(r);
            }
            Command::Approve {
                approval_id,
                decision,
                reply,
            } => {
                let r = self
                    .rt
                    .submit_approval(&approval_id, decision)
                    .and_then(|_| self.drive())
                    .map(|driver| ApprovalResponse {
                        approval_id,
                        decision,
                        driver,
                    });
                self.publish();
                let _ = reply.send(r);
            }
        }
    }

    fn drive(&mut self) -> Result<DriverView, RuntimeError> {
        if self.running {
            let status = self.driver.run_until_blocked(&mut self.rt)?;
            self.driver_view = DriverView::from(&status);
        }
        Ok(self.driver_view.clone())
    }

    fn publish(&mut self) {
        if let Err(e) = self.rt.audit_mut().flush() {
            tracing::error!("audit sink: {e}");
        }
        let fresh: Vec<AuditRecord> = self.rt.audit().records()[self.published..].to_vec();
        self.published += fresh.len();
        let mut outgoing = Vec::with_capacity(fresh.len());
        for record in &fresh {
            outgoing.push(ServerEvent::Audit(record.clone()));
            if record.kind == AuditKind::StepEvaluated {
                if let Some(a) = record.step_id.as_deref().and_then(|id| self.assessment(id)) {
                    outgoing.push(ServerEvent::Risk(a));
                }
            }
        }
        {
            let mut snap = self.snapshot.write().expect("snapshot lock");
            snap.audit.extend(fresh);
            snap.state = state_view(&self.rt, &self.driver_view);
            snap.procedure = procedure_view(&self.rt);
        }
        for ev in outgoing {
            let _ = self.events.send(ev);
        }
    }

    fn assessment(&self, step_id: &str) -> Option<RiskAssessment> {
        let p = self.rt.state().active_procedure.as_ref()?;
        let i = p.steps.iter().position(|s| s.id == step_id)?;
        p.assessments[i].clone()
    }
}

fn state_view(rt: &Runtime, driver: &DriverView) -> StateView {
    StateView {
        state: rt.state().clone(),
        driver: driver.clone(),
        audit_len: rt.audit().len() as u64,
    }
}

fn procedure_view(rt: &Runtime) -> ProcedureView {
    let graph = &rt.scenario().graph;
    let step_views = |steps: &[procgate_core::procedure::ProcedureStep], assessments: &[Option<RiskAssessment>]| {
        steps
            .iter()
            .enumerate()
            .map(|(i, s)| StepView {
                step: s.clone(),
                path: compile_step(s, graph).ok(),
                assessment: assessments.get(i).cloned().flatten(),
            })
            .collect()
    };
    match rt.state().active_procedure.as_ref() {
        Some(p) => ProcedureView {
            active: true,
            event_id: p.event_id.clone(),
            name: p.name.clone(),
            cursor: p.cursor,
            steps: step_views(&p.steps, &p.assessments),
        },
        None => match rt.scenario().procedures.values().next() {
            Some(b) => ProcedureView {
                active: false,
                event_id: b.event_id.clone(),
                name: b.name.clone(),
                cursor: 0,
                steps: step_views(&b.steps, &[]),
            },
            None => ProcedureView {
                active: false,
                event_id: String::new(),
                name: String::new(),
                cursor: 0,
                steps: Vec::new(),
            },
        },
    }
}

/// Starts the writer thread. With `autorun`, the replay runs before this
/// returns so the first snapshot already reflects it.
pub fn start(config: ServerConfig) -> Result<AppState, RuntimeError> {
    let audit = match config.audit_sink {
        Some(sink) => AuditLog::with_sink(sink),
        None => AuditLog::new(),
    };
    let driver = ReplayDriver::new(&config.scenario, &config.telemetry)?;
    let rt = Runtime::new(config.scenario, audit);
    let snapshot = Arc::new(RwLock::new(Snapshot {
        state: state_view(&rt, &DriverView::Idle),
        procedure: procedure_view(&rt),
        audit: Vec::new(),
    }));
    let (events, _) = broadcast::channel(EVENT_CAPACITY);
    let mut writer = Writer {
        rt,
        driver,
        running: false,
        driver_view: DriverView::Idle,
        published: 0,
        snapshot: snapshot.clone(),
        events: events.clone(),
    };
    if config.autorun {
        writer.running = true;
        let r = writer.drive();
        writer.publish();
        r?;
    }
    let (commands, mut rx) = mpsc::channel(COMMAND_CAPACITY);
    std::thread::Builder::new()
        .name("runtime-writer".into())
        .spawn(move || {
            while let Some(cmd) = rx.blocking_recv() {
                writer.handle(cmd);
            }
        })
        .expect("spawn writer thread");
    Ok(AppState {
        commands,
        snapshot,
        events,
    })
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/audit", get(get_audit))
        .route("/procedure", get(get_procedure))
        .route("/approvals/{approval_id}", post(post_approval))
        .route("/events", get(get_events))
        .route("/run", post(post_run))
        .route("/evaluate", post(post_evaluate))
        .route("/execute", post(post_execute))
        .with_state(app)
}

pub async fn serve(
    listener: TcpListener,
    app: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        }
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        use RuntimeError as E;
        let (status, code) = match &e {
            E::UnknownApproval(_) => (StatusCode::NOT_FOUND, "unknown_approval"),
            E::ExpiredApproval { .. } => (StatusCode::GONE, "expired_approval"),
            E::NotActive => (StatusCode::CONFLICT, "not_active"),
            E::NoCurrentStep => (StatusCode::CONFLICT, "no_current_step"),
            E::AlreadyExecuted(_) => (StatusCode::CONFLICT, "already_executed"),
            E::StepNotExecuted(_) => (StatusCode::CONFLICT, "step_not_executed"),
            E::NotEvaluated(_) => (StatusCode::CONFLICT, "not_evaluated"),
            E::ApprovalRequired { .. } => (StatusCode::CONFLICT, "approval_required"),
            E::ApprovalPending { .. } => (StatusCode::CONFLICT, "approval_pending"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "runtime_error"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn call<T>(app: &AppState, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
    let (tx, rx) = oneshot::channel();
    let gone = || {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "runtime_stopped",
            "runtime writer stopped",
        )
    };
    app.commands.send(make(tx)).await.map_err(|_| gone())?;
    rx.await.map_err(|_| gone())?.map_err(ApiError::from)
}

async fn get_state(State(app): State<AppState>) -> Json<StateView> {
    Json(app.snapshot.read().expect("snapshot lock").state.clone())
}

async fn get_procedure(State(app): State<AppState>) -> Json<ProcedureView> {
    Json(app.snapshot.read().expect("snapshot lock").procedure.clone())
}

#[derive(Debug, Default, Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

async fn get_audit(State(app): State<AppState>, Query(q): Query<SinceQuery>) -> Json<Vec<AuditRecord>> {
    let since = q.since.unwrap_or(0);
    let snap = app.snapshot.read().expect("snapshot lock");
    Json(snap.audit.iter().filter(|r| r.seq > since).cloned().collect())
}

async fn post_approval(
    State(app): State<AppState>,
    Path(approval_id): Path<String>,
    Json(req): Json<ApprovalRequest>,
) -> Result<Json<ApprovalResponse>, ApiError> {
    call(&app, |reply| Command::Approve {
        approval_id,
        decision: req.decision,
        reply,
    })
    .await
    .map(Json)
}

async fn post_run(State(app): State<AppState>) -> Result<Json<DriverView>, ApiError> {
    call(&app, Command::Run).await.map(Json)
}

async fn post_evaluate(State(app): State<AppState>) -> Result<Json<RiskAssessment>, ApiError> {
    call(&app, Command::Evaluate).await.map(Json)
}

async fn post_execute(State(app): State<AppState>) -> Result<Json<DriverView>, ApiError> {
    call(&app, Command::Execute).await.map(Json)
}

fn sse_event(ev: &ServerEvent) -> Event {
    let (data, id) = match ev {
        ServerEvent::Audit(r) => (serde_json::to_string(r), Some(r.seq)),
        ServerEvent::Risk(a) => (serde_json::to_string(a), None),
    };
    let event = Event::default().event(ev.name()).data(data.expect("event serializes"));
    match id {
        Some(seq) => event.id(seq.to_string()),
        None => event,
    }
}

/// Backlog of audit records after `since` (or `Last-Event-ID`), then live
/// audit and risk events. Live audit records already sent in the backlog are
/// skipped, so a reconnecting client sees no duplicates.
async fn get_events(
    State(app): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<SinceQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let since = q.since.or(last_event_id).unwrap_or(0);
    let rx = app.events.subscribe();
    let backlog: Vec<ServerEvent> = {
        let snap = app.snapshot.read().expect("snapshot lock");
        snap.audit
            .iter()
            .filter(|r| r.seq > since)
            .cloned()
            .map(ServerEvent::Audit)
            .collect()
    };
    let high_water = backlog
        .iter()
        .filter_map(|e| match e {
            ServerEvent::Audit(r) => Some(r.seq),
            ServerEvent::Risk(_) => None,
        })
        .max()
        .unwrap_or(since);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => return Some((ev, rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!("event subscriber lagged by {n} messages");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .filter(move |ev| {
        let keep = match ev {
            ServerEvent::Audit(r) => r.seq > high_water,
            ServerEvent::Risk(_) => true,
        };
        futures::future::ready(keep)
    });
    let all = stream::iter(backlog).chain(live).map(|ev| Ok(sse_event(&ev)));
    Sse::new(all).keep_alive(KeepAlive::default())
}
