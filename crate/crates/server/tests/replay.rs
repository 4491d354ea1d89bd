mod common;

use std::collections::BTreeSet;
use std::fs;

use chrono::{DateTime, Duration, Utc};
use undr_core::needslog::{SelectionEvent, SessionProfile};
use undr_core::Selection;
use undr_server::state::{EVENT_LOG, SNAPSHOT_DIR, SNAPSHOT_MANIFEST};
use undr_server::EngineState;

fn t(minutes: i64) -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH + Duration::days(20_000) + Duration::minutes(minutes)
}

fn event(session: &str, facet: &str, bins: &[&str], sequence: u64) -> SelectionEvent {
    let selection = if bins.is_empty() { Selection::Any } else { Selection::values(bins.iter().copied()) };
    SelectionEvent { session_id: session.into(), facet_id: facet.into(), selection, sequence }
}

fn fingerprint(state: &EngineState, sessions: &[&str]) -> String {
    let pending: Vec<_> = sessions.iter().map(|s| state.pending(s).ok()).collect();
    serde_json::to_string(&(state.records(), pending, state.health())).unwrap()
}

fn drive(state: &EngineState) {
    for i in 0..40 {
        let sid = format!("visitor-{i}");
        state.post_selection(&event(&sid, "brand", &["apple"], 1), t(i)).unwrap();
        state.post_selection(&event(&sid, "screen_size", &["12-14", "14.1-16"], 2), t(i)).unwrap();
        state.post_selection(&event(&sid, "screen_size", &["gt16"], 1), t(i)).unwrap();
        let tasks: BTreeSet<String> = if i % 3 == 0 { ["software_development".to_string()].into() } else { BTreeSet::new() };
        state.finalize(&sid, &SessionProfile { usage_tasks: tasks, ..Default::default() }, t(i + 1)).unwrap();
    }
    state.recompute(None, t(60)).unwrap();
    state.post_selection(&event("open-a", "price", &["lt300"], 1), t(61)).unwrap();
    state.post_selection(&event("open-b", "price", &["gte1500"], 4), t(62)).unwrap();
    state.post_selection(&event("open-b", "price", &[], 5), t(63)).unwrap();
    state.finalize("visitor-0", &SessionProfile::default(), t(64)).unwrap();
}

#[test]
fn restart_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, pool) = common::survey(7);
    let sessions = ["visitor-0", "visitor-39", "open-a", "open-b"];

    let first = common::open(dir.path(), pool.clone(), 30);
    let initial_hash = first.table("all", None).unwrap().hash().to_owned();
    drive(&first);
    let before = fingerprint(&first, &sessions);
    let generation = first.snapshot().generation;
    assert_eq!(generation, 1);
    assert_ne!(first.table("all", None).unwrap().hash(), initial_hash);
    drop(first);

    let log = fs::read_to_string(dir.path().join(EVENT_LOG)).unwrap();
    assert_eq!(log.lines().count(), 40 * 4 + 1 + 3);
    assert!(dir.path().join(SNAPSHOT_MANIFEST).exists());
    assert!(fs::read_dir(dir.path().join(SNAPSHOT_DIR)).unwrap().count() >= 6);

    let second = common::open(dir.path(), pool.clone(), 30);
    assert_eq!(fingerprint(&second, &sessions), before);
    assert_eq!(second.snapshot().generation, generation);
    assert!(second.table("all", Some(&initial_hash)).is_ok());

    second.post_selection(&event("late", "ram_size", &["8"], 1), t(70)).unwrap();
    drop(second);
    let grown = fs::read_to_string(dir.path().join(EVENT_LOG)).unwrap();
    assert!(grown.starts_with(&log), "event log must only grow");
    assert_eq!(grown.lines().count(), log.lines().count() + 1);
}

#[test]
fn rejected_operations_are_not_logged() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, pool) = common::survey(7);
    let state = common::open(dir.path(), pool.into_iter().take(5).collect(), 30);
    assert!(state.post_selection(&event("s", "price", &["free"], 1), t(0)).is_err());
    assert!(state.recompute(None, t(1)).is_err());
    state.finalize("s", &SessionProfile::default(), t(2)).unwrap();
    assert!(state.post_selection(&event("s", "price", &["lt300"], 2), t(3)).is_err());
    let log = fs::read_to_string(dir.path().join(EVENT_LOG)).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("\"kind\":\"finalize\""));
}

#[test]
fn corrupt_log_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(EVENT_LOG), "{\"format_version\":1,\"kind\":\"recompute\",\"at\":\"2024-01-01T00:00:00Z\",\"cohort\":null}\nnot json\n").unwrap();
    let (schema, catalog, pool) = common::survey(7);
    let err = EngineState::open(schema, catalog, pool, undr_server::ServerConfig::new(dir.path())).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn idle_sessions_are_finalized_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, pool) = common::survey(7);
    let state = common::open(dir.path(), pool.clone(), 30);
    state.post_selection(&event("idle", "cpu_brand", &["amd"], 1), t(0)).unwrap();
    state.post_selection(&event("busy", "cpu_brand", &["intel"], 1), t(25)).unwrap();
    let done = state.sweep_idle(t(31)).unwrap();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].record_id, "session:idle");
    drop(state);
    let again = common::open(dir.path(), pool, 30);
    assert_eq!(again.records().len(), 278);
}
