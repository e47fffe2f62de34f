mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use lads_core::gateway::{ScriptedExchange, ScriptedResponse};
use lads_core::report::{detect_sections, fallback_summary, ReportSection, Summarizer};
use lads_core::session::{SessionHandle, SummaryMode};
use lads_core::{start_session, EventLog, SessionError, SessionStore};

fn with_reporter(reporter: ScriptedExchange) -> Vec<ScriptedExchange> {
    let mut v = codegen_exchanges(GOOD_MODEL, &[]);
    v.retain(|e| e.template_id.as_deref() != Some("reporter"));
    v.push(reporter);
    v
}

#[test]
fn incomplete_report_falls_back_to_a_six_section_template() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path(), 4);
    let (gw, provider) = scripted(with_reporter(ScriptedExchange::text(
        "reporter",
        "## Overview\nAll good.",
    )));
    let mut session = start_session(
        "predict target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), 1),
    )
    .unwrap();
    let result = session.run_turn().unwrap();
    let report = result.report.unwrap();
    assert_eq!(detect_sections(&report).len(), 6, "{report}");
    assert_eq!(provider.requests_for("reporter#repair").len(), 1);
    let auc = result.metrics["auc"];
    assert!(report.contains(&lads_core::report::format_metric(auc)), "{report}");
    assert!(report.contains("```python"));
}

#[test]
fn report_missing_metric_values_gets_them_appended() {
    let dir = tempfile::tempdir().unwrap();
    let data = binary_dataset(dir.path(), 4);
    let (gw, _) = scripted(codegen_exchanges(GOOD_MODEL, &[]));
    let mut session = start_session(
        "predict target",
        Some(&data),
        gw,
        session_config(&dir.path().join("w"), 1),
    )
    .unwrap();
    let result = session.run_turn().unwrap();
    let report = result.report.unwrap();
    assert!(report.starts_with(REPORT.trim_end()));
    assert!(report.contains(&lads_core::report::format_metric(result.metrics["auc"])));
    let sections = detect_sections(&report);
    assert!(sections.contains(&ReportSection::CodeHighlights));
    let saved = session.state().artifacts.last().unwrap().report.clone().unwrap();
    assert_eq!(std::fs::read_to_string(saved).unwrap(), report);
}

#[test]
fn event_log_survives_reopening() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    {
        let log = EventLog::open("s1", &path, Summarizer::Template).unwrap();
        log.emit_step("split", "8:2, seed 42");
        log.emit_step("mystery", "details");
    }
    let log = EventLog::open("s1", &path, Summarizer::Template).unwrap();
    assert_eq!(log.len(), 2);
    let e = log.emit_step("report", "done");
    assert_eq!(e.seq, 2);
    let events = log.events();
    assert!(events[0]
        .plain_summary
        .as_deref()
        .unwrap()
        .contains("80% for learning, 20% for checking"));
    assert_eq!(
        events[1].plain_summary.as_deref(),
        Some(fallback_summary("mystery").as_str())
    );
    assert_eq!(log.since(1).len(), 2);
}

#[test]
fn wait_since_wakes_on_new_events() {
    let log = Arc::new(EventLog::in_memory("s", Summarizer::Off));
    let writer = Arc::clone(&log);
    let t = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(50));
        writer.emit_step("plan", "four steps");
    });
    let got = log.wait_since(0, Duration::from_secs(5));
    t.join().unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].plain_summary, None);
    assert!(log.wait_since(1, Duration::from_millis(20)).is_empty());
}

#[test]
fn llm_summaries_fall_back_on_provider_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut exchanges = vec![ScriptedExchange {
        template_id: Some("summarize_step".into()),
        contains: None,
        response: ScriptedResponse::Fail("offline".into()),
        uses: None,
    }];
    exchanges.extend(codegen_exchanges(GOOD_MODEL, &[]));
    let (gw, _) = scripted(exchanges);
    let mut config = session_config(&dir.path().join("w"), 1);
    config.summaries = SummaryMode::Llm;
    let data = binary_dataset(dir.path(), 6);
    let mut session = start_session("predict target", Some(&data), gw, config).unwrap();
    session.run_turn().unwrap();
    for e in session.events().events() {
        assert_eq!(
            e.plain_summary.as_deref(),
            Some(fallback_summary(&e.step_name).as_str())
        );
    }
}

#[test]
fn concurrent_turns_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (gw, _) = scripted(vec![ScriptedExchange::text("dispatch", "END")]);
    let store = SessionStore::new(gw, session_config(dir.path(), 1), 1);
    let handle: Arc<SessionHandle> = store.create().unwrap();
    assert!(matches!(store.create(), Err(SessionError::StoreUnavailable(_))));
    assert!(matches!(store.get("nope"), Err(SessionError::UnknownSession(_))));
    let ticket = handle.begin_turn("bye").unwrap();
    assert!(handle.is_running());
    assert!(matches!(handle.begin_turn("again"), Err(SessionError::TurnInProgress)));
    handle.run_turn(&ticket).unwrap();
    assert!(!handle.is_running());
    assert!(matches!(handle.begin_turn("hello"), Err(SessionError::SessionEnded)));
}
