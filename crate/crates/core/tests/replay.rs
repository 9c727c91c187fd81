mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use common::*;
use procgate_core::audit::{check_authority, check_sequence, executed_step_heps, Actor, AuditKind, AuditLog};
use procgate_core::gate::Verdict;
use procgate_core::procedure::Lifecycle;
use procgate_core::replay::{run_headless, ApprovalScript, RunStatus};
use procgate_core::runtime::Decision;
use procgate_core::scenario::Scenario;

fn replay(script: &ApprovalScript) -> (procgate_core::replay::RunReport, String) {
    let (report, rt) = run_headless(scenario(), &stream(), script, AuditLog::new()).unwrap();
    (report, rt.audit().to_jsonl())
}

#[test]
fn approve_all_executes_every_step() {
    let (report, log) = replay(&ApprovalScript::all(Decision::Approved));
    assert_eq!(report.run, RunStatus::Completed);
    assert_eq!(
        report.detected_event.as_ref().unwrap().name,
        "Disconnection of Generator to 6kV 1B Bus bar"
    );
    assert_eq!(report.steps.len(), 10);
    assert!(report.steps.iter().all(|s| s.lifecycle == Lifecycle::Executed));
    let verdicts: Vec<Verdict> = report.steps.iter().map(|s| s.verdict).collect();
    assert!(verdicts.contains(&Verdict::Allow));
    assert!(verdicts.contains(&Verdict::Suggest));
    assert!(verdicts.contains(&Verdict::Block));

    let records = procgate_core::audit::parse_jsonl(&log).unwrap();
    check_sequence(&records).unwrap();
    check_authority(&records).unwrap();
    let last = records.last().unwrap();
    assert_eq!(last.kind, AuditKind::ProcedureCompleted);
    let survive: f64 = executed_step_heps(&records).iter().map(|(_, h)| 1.0 - h).product();
    assert!((last.systemic_hep.unwrap() - (1.0 - survive)).abs() <= 1e-12);
    assert_eq!(report.systemic_hep, last.systemic_hep.unwrap());
}

#[test]
fn reject_all_halts_at_first_gated_step() {
    let (report, log) = replay(&ApprovalScript::all(Decision::Rejected));
    let records = procgate_core::audit::parse_jsonl(&log).unwrap();
    check_authority(&records).unwrap();
    assert_eq!(report.run, RunStatus::Halted { step_id: "FE1".into() });
    assert!(records
        .iter()
        .filter(|r| r.kind == AuditKind::StepExecuted)
        .all(|r| r.actor == Actor::System));
    assert_eq!(report.steps[0].lifecycle, Lifecycle::Intended);
}

#[test]
fn mixed_script_stops_after_rejection() {
    let script = ApprovalScript::from_json(
        r#"[{"ordinal": 1, "decision": "approved"}, {"ordinal": 2, "decision": "rejected"}]"#,
    )
    .unwrap();
    let (report, log) = replay(&script);
    let records = procgate_core::audit::parse_jsonl(&log).unwrap();
    check_authority(&records).unwrap();
    // FE1 approved, FE2 allowed, FE3 rejected
    assert_eq!(report.run, RunStatus::Halted { step_id: "FE3".into() });
    let executed: Vec<&str> = records
        .iter()
        .filter(|r| r.kind == AuditKind::StepExecuted)
        .filter_map(|r| r.step_id.as_deref())
        .collect();
    assert_eq!(executed, ["FE1", "FE2"]);
}

#[test]
fn uncovered_ordinal_leaves_approval_pending() {
    let script = ApprovalScript::from_json(r#"[{"ordinal": 1, "decision": "approved"}]"#).unwrap();
    let (report, _) = replay(&script);
    assert_eq!(
        report.run,
        RunStatus::AwaitingApproval {
            approval_id: "apr-0002".into(),
            ordinal: 2
        }
    );
}

#[test]
fn late_decision_expires_and_step_is_reevaluated() {
    let script = ApprovalScript::from_json(
        r#"{"default": "approved", "decisions": [{"ordinal": 1, "decision": "approved", "delay_ticks": 600}]}"#,
    )
    .unwrap();
    let (report, log) = replay(&script);
    assert_eq!(report.run, RunStatus::Completed);
    let records = procgate_core::audit::parse_jsonl(&log).unwrap();
    check_authority(&records).unwrap();
    let expired: Vec<_> = records
        .iter()
        .filter(|r| r.kind == AuditKind::ApprovalExpired)
        .collect();
    assert_eq!(expired.len(), 1);
    assert_eq!(expired[0].approval_id.as_deref(), Some("apr-0001"));
    let fe1_evals = records
        .iter()
        .filter(|r| r.kind == AuditKind::StepEvaluated && r.step_id.as_deref() == Some("FE1"))
        .count();
    assert_eq!(fe1_evals, 2);
}

#[test]
fn manual_execution_waits_on_allow() {
    let mut cfg = scenario_config();
    cfg.auto_execute_allow = false;
    let scenario = Arc::new(Scenario::from_config(cfg, &shutdown_dir()).unwrap());
    let (report, _) = run_headless(
        scenario,
        &stream(),
        &ApprovalScript::all(Decision::Approved),
        AuditLog::new(),
    )
    .unwrap();
    assert_eq!(report.run, RunStatus::AwaitingExecution { step_id: "FE2".into() });
}

#[test]
fn nominal_telemetry_finishes_without_event() {
    let (report, rt) = run_headless(
        scenario(),
        &telemetry("corpus/nominal_1.csv"),
        &ApprovalScript::all(Decision::Approved),
        AuditLog::new(),
    )
    .unwrap();
    assert_eq!(report.run, RunStatus::NoEvent);
    assert!(report.steps.is_empty());
    assert!(rt.audit().is_empty());
}

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn sink_receives_the_same_bytes_and_replays_are_identical() {
    let a = Shared::default();
    let b = Shared::default();
    let script = ApprovalScript::all(Decision::Approved);
    let (_, rt_a) = run_headless(scenario(), &stream(), &script, AuditLog::with_sink(Box::new(a.clone()))).unwrap();
    let (_, rt_b) = run_headless(scenario(), &stream(), &script, AuditLog::with_sink(Box::new(b.clone()))).unwrap();
    let bytes_a = a.0.lock().unwrap().clone();
    let bytes_b = b.0.lock().unwrap().clone();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(String::from_utf8(bytes_a).unwrap(), rt_a.audit().to_jsonl());
    assert_eq!(rt_a.audit().to_jsonl(), rt_b.audit().to_jsonl());
}

#[test]
fn parsed_trail_serializes_back_byte_for_byte() {
    let (_, log) = replay(&ApprovalScript::all(Decision::Approved));
    let records = procgate_core::audit::parse_jsonl(&log).unwrap();
    assert_eq!(procgate_core::audit::to_jsonl(&records), log);
}
