use procgate_client::{ClientError, ServerEvent, SseParser};
use procgate_core::audit::{AuditKind, AuditRecord};

fn record(seq: u64) -> AuditRecord {
    let mut r = AuditRecord::new(AuditKind::EventDetected).detail("E01");
    r.seq = seq;
    r
}

fn frame(r: &AuditRecord) -> String {
    format!(
        "event: audit\nid: {}\ndata: {}\n\n",
        r.seq,
        serde_json::to_string(r).unwrap()
    )
}

#[test]
fn decodes_events_split_across_chunks() {
    let text = format!(": keep-alive\n\n{}{}", frame(&record(1)), frame(&record(2)));
    let mut parser = SseParser::default();
    let mut out = Vec::new();
    for chunk in text.as_bytes().chunks(7) {
        out.extend(parser.feed(chunk));
    }
    let got: Vec<ServerEvent> = out.into_iter().map(Result::unwrap).collect();
    assert_eq!(got, vec![ServerEvent::Audit(record(1)), ServerEvent::Audit(record(2))]);
}

#[test]
fn crlf_line_endings_are_accepted() {
    let text = frame(&record(5)).replace('\n', "\r\n");
    let out = SseParser::default().feed(text.as_bytes());
    assert_eq!(out.len(), 1);
    assert_eq!(*out[0].as_ref().unwrap(), ServerEvent::Audit(record(5)));
}

#[test]
fn unknown_event_names_are_reported() {
    let out = SseParser::default().feed(b"event: other\ndata: {}\n\n");
    assert!(matches!(out[0], Err(ClientError::UnknownEvent(ref n)) if n == "other"));
}

#[test]
fn malformed_data_is_a_decode_error() {
    let out = SseParser::default().feed(b"event: audit\ndata: not json\n\n");
    assert!(matches!(out[0], Err(ClientError::Decode(_))));
}
