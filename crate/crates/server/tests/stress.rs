mod common;

use std::sync::Arc;
use std::time::Duration;

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_rankings_match_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, pool) = common::survey(7);
    let state = Arc::new(common::open(dir.path(), pool, 30));
    let base = common::spawn(state.clone()).await;
    let outcome = common::consistency::run(state.clone(), base, 10_000, 32, 11).await;
    eprintln!("{} requests, {} tables, {} writes, max latency {:?}", outcome.requests, outcome.distinct_hashes, outcome.writes, outcome.max_latency);
    assert_eq!(outcome.requests, 10_000);
    assert!(outcome.violations.is_empty(), "{:#?}", &outcome.violations[..outcome.violations.len().min(5)]);
    assert!(outcome.distinct_hashes > 3, "writer never changed a table: {outcome:?}");
    assert!(outcome.writes > 0);
    assert!(outcome.max_latency < Duration::from_secs(2), "{:?}", outcome.max_latency);
    assert!(state.snapshot().generation > 0);
}
