mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::*;
use procgate_core::audit::{check_authority, check_sequence, AuditKind, AuditLog, OperatorAction};
use procgate_core::gate::{systemic_hep, Factor, Verdict};
use procgate_core::perception::CentroidDetector;
use procgate_core::procedure::{Lifecycle, ProcedureStep, StepKind};
use procgate_core::replay::ReplayDriver;
use procgate_core::risk::{AssessmentContext, PifAssessor, PifState, RiskError, RuleAssessor, Severity, DEFAULT_PIFS};
use procgate_core::runtime::{assess_step, Decision, Mode, Runtime, RuntimeError, TickOutcome};
use procgate_core::scenario::Scenario;

fn cursor_step(rt: &Runtime) -> ProcedureStep {
    let p = rt.state().active_procedure.as_ref().unwrap();
    p.steps[p.cursor].clone()
}

#[test]
fn nominal_frames_stay_idle_without_audit() {
    let scenario = scenario();
    let t = telemetry("corpus/nominal_0.csv")
        .project(&scenario.calibration.names())
        .unwrap();
    let mut rt = Runtime::new(scenario, AuditLog::new());
    let report = rt.tick(&t.frames).unwrap();
    assert_eq!(report.outcome, TickOutcome::NoEvent);
    assert_eq!(report.consumed, t.frames.len());
    assert_eq!(rt.state().mode, Mode::Idle);
    assert!(rt.audit().is_empty());
}

#[test]
fn generator_disconnect_activates_shutdown() {
    let rt = active_runtime(scenario());
    let state = rt.state();
    assert_eq!(state.mode, Mode::EventActive);
    assert_eq!(
        state.active_event.as_ref().unwrap().name,
        "Disconnection of Generator to 6kV 1B Bus bar"
    );
    let p = state.active_procedure.as_ref().unwrap();
    assert_eq!(p.name, "Reactor Shutdown");
    assert_eq!(p.steps.len(), 10);
    assert_eq!(rt.audit().records()[0].kind, AuditKind::EventDetected);
    assert_eq!(rt.audit().records()[0].event_id.as_deref(), Some("E01"));
}

#[test]
fn unmapped_event_is_audited_once() {
    let scenario = scenario();
    let t = telemetry("corpus/e02_0.csv")
        .project(&scenario.calibration.names())
        .unwrap();
    let mut rt = Runtime::new(scenario, AuditLog::new());
    let first = rt.tick(&t.frames).unwrap();
    assert!(matches!(first.outcome, TickOutcome::UnknownEvent(ref l) if l.event_id == "E02"));
    let rest = rt.tick(&t.frames[first.consumed..]).unwrap();
    assert_eq!(rest.outcome, TickOutcome::NoEvent);
    assert_eq!(rt.state().mode, Mode::Idle);
    let kinds: Vec<AuditKind> = rt.audit().records().iter().map(|r| r.kind).collect();
    assert_eq!(kinds, [AuditKind::UnknownEvent]);
}

#[test]
fn frames_out_of_order_are_rejected() {
    let scenario = scenario();
    let t = stream().project(&scenario.calibration.names()).unwrap();
    let mut rt = Runtime::new(scenario, AuditLog::new());
    rt.tick(&t.frames[..5]).unwrap();
    let err = rt.tick(&t.frames[2..3]).unwrap_err();
    assert!(matches!(err, RuntimeError::NonMonotonicTime { .. }));
}

/// Upper normal tail by composite Simpson integration of the density.
fn normal_tail(z: f64) -> f64 {
    let (hi, n) = (z + 12.0, 200_000);
    let h = (hi - z) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(z) + pdf(hi);
    for i in 1..n {
        s += pdf(z + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn one_node_step_with_generous_time_is_allowed() {
    let scenario = scenario();
    let step = ProcedureStep {
        id: "X1".into(),
        text: "open the procedure".into(),
        kind: StepKind::FlowchartExecution,
        targets: vec!["Procedure".into()],
        expected_states: BTreeMap::new(),
        lifecycle: Lifecycle::Pending,
    };
    let a = assess_step(&scenario, &RuleAssessor::default(), &step, 1, false, 120.0, 0).unwrap();

    // mental prep, visual search, point from (960,540) to (198,95), click
    let d = ((960.0f64 - 198.0).powi(2) + (540.0f64 - 95.0).powi(2)).sqrt();
    let median = 1.35 + 1.10 + (0.1 + 0.15 * (d / 30.0 + 1.0).log2()) + 0.20;
    assert!((a.median_s - median).abs() < 1e-12);
    let z = (120.0f64 / median).ln() / 0.28;
    let p_t = normal_tail(z);
    assert!((a.p_t - p_t).abs() <= 1e-6 * p_t);
    let p_c = 1.0 - (1.0 - 1e-3) * (1.0 - 2e-3) * (1.0 - 2e-3) * (1.0 - 1e-3);
    assert!((a.p_c - p_c).abs() < 1e-15);
    assert!(a.pifs.iter().all(|(_, l)| l == Severity::Nominal));
    // every evidence node in its lowest state leaves only the noisy-OR leak
    assert!((a.action_risk - 1e-4).abs() < 1e-15);
    assert_eq!(a.decision.verdict, Verdict::Allow);
    assert!(!a.decision.approval_required);
}

#[test]
fn screen_navigation_one_under_pressure_needs_approval() {
    let mut rt = active_runtime(scenario());
    for _ in 0..3 {
        let t = rt.current_t_avail().unwrap();
        rt.evaluate_current_step(t).unwrap();
        if let Some(tok) = rt.live_token(&cursor_step(&rt).id).cloned() {
            rt.submit_approval(&tok.approval_id, Decision::Approved).unwrap();
        } else {
            rt.execute_allowed().unwrap();
        }
        rt.advance().unwrap();
    }
    assert_eq!(cursor_step(&rt).id, "SN1");
    let a = rt.evaluate_current_step(20.0).unwrap();
    assert_ne!(a.decision.verdict, Verdict::Allow);
    assert!(a.decision.approval_required);
    assert!(a
        .decision
        .explanation
        .iter()
        .any(|f| matches!(f, Factor::Pif { name, level } if name == "hsi_complexity" && *level == Severity::High)));
    let tok = rt.live_token("SN1").unwrap();
    assert_eq!(tok.expires_at, rt.state().clock + 600);
    let last = rt.audit().records().last().unwrap();
    assert_eq!(last.kind, AuditKind::StepEvaluated);
    assert_eq!(last.approval_id.as_deref(), Some(tok.approval_id.as_str()));
}

#[test]
fn approval_consumes_token_and_executes() {
    let mut rt = active_runtime(scenario());
    let a = rt.evaluate_current_step(60.0).unwrap();
    assert_eq!(a.step_id, "FE1");
    assert_eq!(a.decision.verdict, Verdict::Suggest);
    let id = rt.live_token("FE1").unwrap().approval_id.clone();
    assert_eq!(rt.state().pending_approvals.len(), 1);
    assert!(matches!(
        rt.execute_allowed(),
        Err(RuntimeError::ApprovalRequired { .. })
    ));

    rt.submit_approval(&id, Decision::Approved).unwrap();
    assert!(rt.state().pending_approvals.is_empty());
    assert_eq!(cursor_step(&rt).lifecycle, Lifecycle::Executed);
    let err = rt.submit_approval(&id, Decision::Approved).unwrap_err();
    assert!(matches!(err, RuntimeError::UnknownApproval(ref x) if x == &id));

    let executed = rt.audit().records().last().unwrap();
    assert_eq!(executed.kind, AuditKind::StepExecuted);
    assert_eq!(executed.operator_action, OperatorAction::Approved);
    assert_eq!(executed.approval_id.as_deref(), Some(id.as_str()));
}

#[test]
fn approval_after_expiry_is_refused() {
    let mut rt = active_runtime(scenario());
    rt.evaluate_current_step(60.0).unwrap();
    let tok = rt.live_token("FE1").unwrap().clone();
    rt.advance_clock(tok.expires_at - 1);
    assert!(rt.live_token("FE1").is_some());
    rt.advance_clock(tok.expires_at);
    let err = rt.submit_approval(&tok.approval_id, Decision::Approved).unwrap_err();
    assert!(matches!(err, RuntimeError::ExpiredApproval { expires_at, .. } if expires_at == tok.expires_at));
    assert_eq!(cursor_step(&rt).lifecycle, Lifecycle::Intended);
    assert!(rt.state().pending_approvals.is_empty());
    assert!(rt
        .audit()
        .records()
        .iter()
        .any(|r| r.kind == AuditKind::ApprovalExpired && r.approval_id == Some(tok.approval_id.clone())));

    // the step can be evaluated again and gets a fresh token
    rt.evaluate_current_step(60.0).unwrap();
    let again = rt.live_token("FE1").unwrap();
    assert_ne!(again.approval_id, tok.approval_id);
    assert_eq!(again.ordinal, 2);
}

#[test]
fn rejection_leaves_step_intended_and_reevaluable() {
    let mut rt = active_runtime(scenario());
    rt.evaluate_current_step(60.0).unwrap();
    let id = rt.live_token("FE1").unwrap().approval_id.clone();
    rt.submit_approval(&id, Decision::Rejected).unwrap();
    assert_eq!(cursor_step(&rt).lifecycle, Lifecycle::Intended);
    assert!(rt.state().pending_approvals.is_empty());
    assert!(rt.state().active_procedure.as_ref().unwrap().rejected);
    assert!(matches!(rt.advance(), Err(RuntimeError::StepNotExecuted(_))));
    let r = rt.audit().records().last().unwrap();
    assert_eq!(
        (r.kind, r.operator_action),
        (AuditKind::ApprovalDecision, OperatorAction::Rejected)
    );

    let a = rt.evaluate_current_step(60.0).unwrap();
    assert!(a.decision.approval_required);
    assert!(rt.live_token("FE1").is_some());
}

#[test]
fn one_live_token_per_step() {
    let mut rt = active_runtime(scenario());
    rt.evaluate_current_step(60.0).unwrap();
    assert!(matches!(
        rt.evaluate_current_step(60.0),
        Err(RuntimeError::ApprovalPending { .. })
    ));
}

#[test]
fn advance_requires_execution() {
    let mut rt = active_runtime(scenario());
    assert!(matches!(rt.advance(), Err(RuntimeError::StepNotExecuted(ref s)) if s == "FE1"));
    assert_eq!(cursor_step(&rt).lifecycle, Lifecycle::Pending);
}

#[test]
fn evaluation_needs_an_active_procedure() {
    let mut rt = Runtime::new(scenario(), AuditLog::new());
    assert!(matches!(rt.evaluate_current_step(10.0), Err(RuntimeError::NotActive)));
}

#[test]
fn full_approval_run_completes_with_systemic_record() {
    let mut rt = active_runtime(scenario());
    let mut heps = Vec::new();
    loop {
        let t = rt.current_t_avail().unwrap();
        let a = rt.evaluate_current_step(t).unwrap();
        heps.push(a.step_hep);
        match rt.live_token(&a.step_id).cloned() {
            Some(tok) => rt.submit_approval(&tok.approval_id, Decision::Approved).unwrap(),
            None => rt.execute_allowed().unwrap(),
        }
        rt.advance().unwrap();
        let last = rt.audit().records().last().unwrap();
        let sys = last.systemic_hep.unwrap();
        assert!((sys - systemic_hep(&heps)).abs() < 1e-15);
        if rt.state().mode == Mode::Completed {
            assert_eq!(last.kind, AuditKind::ProcedureCompleted);
            break;
        }
    }
    assert_eq!(heps.len(), 10);
    assert!(matches!(
        rt.evaluate_current_step(10.0),
        Err(RuntimeError::NoCurrentStep)
    ));
    assert!(matches!(rt.advance(), Err(RuntimeError::NoCurrentStep)));
    check_sequence(rt.audit().records()).unwrap();
    check_authority(rt.audit().records()).unwrap();
}

#[test]
fn systemic_hep_of_two_steps() {
    assert!((systemic_hep(&[0.01, 0.01]) - 0.0199).abs() < 1e-15);
}

struct Fixed(PifState);

impl PifAssessor for Fixed {
    fn assess(&self, _: &AssessmentContext<'_>, _: Duration) -> Result<PifState, RiskError> {
        Ok(self.0.clone())
    }
}

struct Slow;

impl PifAssessor for Slow {
    fn assess(&self, _: &AssessmentContext<'_>, _: Duration) -> Result<PifState, RiskError> {
        thread::sleep(Duration::from_millis(30));
        Ok(PifState::nominal(&DEFAULT_PIFS))
    }
}

#[test]
fn assessor_is_pluggable() {
    let scenario = scenario();
    let step = scenario.procedures["E01"].steps[3].clone();
    let rule = RuleAssessor::new(scenario.pif_model.assessor.clone());
    let reference = assess_step(&scenario, &rule, &step, 7, false, 30.0, 0).unwrap();
    let fixed = Fixed(reference.pifs.clone());
    let plugged = assess_step(&scenario, &fixed, &step, 7, false, 30.0, 0).unwrap();
    assert_eq!(plugged, reference);

    let mut high = PifState::nominal(&DEFAULT_PIFS);
    for p in DEFAULT_PIFS {
        high.set(p, Severity::High);
    }
    let worst = assess_step(&scenario, &Fixed(high), &step, 7, false, 30.0, 0).unwrap();
    assert!(worst.p_c >= reference.p_c);
}

#[test]
fn slow_assessor_misses_its_deadline() {
    let mut cfg = scenario_config();
    cfg.assessor_deadline_ms = 5;
    let scenario = Arc::new(Scenario::from_config(cfg, &shutdown_dir()).unwrap());
    let detector = Box::new(CentroidDetector {
        signatures: scenario.signatures.signatures.clone(),
    });
    let mut rt = Runtime::with_parts(scenario.clone(), AuditLog::new(), Box::new(Slow), detector);
    let mut driver = ReplayDriver::new(&scenario, &stream()).unwrap();
    while rt.state().mode == Mode::Idle {
        driver.pump(&mut rt).unwrap();
    }
    let err = rt.evaluate_current_step(60.0).unwrap_err();
    assert!(matches!(
        err,
        RuntimeError::Risk {
            source: RiskError::DeadlineExceeded(_),
            ..
        }
    ));
    assert_eq!(cursor_step(&rt).lifecycle, Lifecycle::Pending);
}
