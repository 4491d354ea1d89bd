//! Concurrent ranking reads against a live writer, each response checked
//! against the oracle ranking of the table it claims to come from.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use undr_core::fraction::ratio_from_str;
use undr_core::needslog::{SelectionEvent, SessionProfile};
use undr_core::{FacetSchema, Product, Selection, WeightTable};
use undr_oracles::{OracleFacet, OracleTable};
use undr_server::EngineState;

pub const COHORTS: [&str; 3] = ["all", "basic", "advanced"];
pub const KS: [usize; 4] = [5, 10, 25, 182];

#[derive(Debug)]
pub struct Outcome {
    pub requests: usize,
    pub violations: Vec<String>,
    pub distinct_hashes: usize,
    pub writes: usize,
    pub max_latency: Duration,
}

pub fn oracle_table(table: &WeightTable) -> OracleTable {
    OracleTable {
        total_users: table.total_users,
        facets: table
            .facets
            .iter()
            .map(|f| OracleFacet {
                facet_id: f.facet_id.clone(),
                any_count: f.any_count,
                facet_weight: f.facet_weight.to_ratio(),
                value_weights: f.values.iter().map(|v| (v.bin_id.clone(), v.value_weight.to_ratio())).collect(),
            })
            .collect(),
    }
}

fn writer(state: Arc<EngineState>, stop: Arc<AtomicBool>, seed: u64) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let schema = state.schema().clone();
    let mut writes = 0;
    let mut session = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let sid = format!("stress-{session}");
        session += 1;
        for (i, facet) in schema.facets.iter().enumerate() {
            if rng.gen_bool(0.3) {
                continue;
            }
            let bin = &facet.values[rng.gen_range(0..facet.values.len())].bin_id;
            let event = SelectionEvent {
                session_id: sid.clone(),
                facet_id: facet.facet_id.clone(),
                selection: Selection::values([bin.as_str()]),
                sequence: i as u64,
            };
            state.post_selection(&event, Utc::now()).unwrap();
            writes += 1;
        }
        let tasks: BTreeSet<String> =
            if rng.gen_bool(0.5) { ["software_development".to_string()].into() } else { BTreeSet::new() };
        state.finalize(&sid, &SessionProfile { usage_tasks: tasks, ..Default::default() }, Utc::now()).unwrap();
        writes += 1;
        if session % 5 == 0 {
            state.recompute(None, Utc::now()).unwrap();
            writes += 1;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    writes
}

struct Entry {
    product_id: String,
    exact_score: Option<String>,
    coverage: Option<u64>,
}

enum Reply {
    Ranked { hash: Option<String>, entries: Vec<Entry> },
    Failed(String),
}

fn compact(body: &Value) -> Reply {
    let ranking = &body["ranking"];
    let Some(entries) = ranking["entries"].as_array() else {
        return Reply::Failed(body.to_string());
    };
    Reply::Ranked {
        hash: ranking["provenance"]["table_hash"].as_str().map(str::to_owned),
        entries: entries
            .iter()
            .map(|e| Entry {
                product_id: e["product_id"].as_str().unwrap_or_default().to_owned(),
                exact_score: e["exact_score"].as_str().map(str::to_owned),
                coverage: e["coverage"].as_u64(),
            })
            .collect(),
    }
}

/// Issues `requests` ranking GETs from `clients` concurrent clients while a
/// writer keeps adding sessions and recomputing.
pub async fn run(state: Arc<EngineState>, base: String, requests: usize, clients: usize, seed: u64) -> Outcome {
    let schema: FacetSchema = state.schema().clone();
    let catalog: Vec<Product> = state.catalog().to_vec();
    let stop = Arc::new(AtomicBool::new(false));
    let writer_handle = {
        let (state, stop) = (state.clone(), stop.clone());
        tokio::task::spawn_blocking(move || writer(state, stop, seed))
    };

    let client = reqwest::Client::new();
    let mut tasks = tokio::task::JoinSet::new();
    for c in 0..clients {
        let (client, base) = (client.clone(), base.clone());
        let share = requests / clients + usize::from(c < requests % clients);
        tasks.spawn(async move {
            let mut rng = StdRng::seed_from_u64(seed ^ (c as u64 + 1));
            let mut out = Vec::with_capacity(share);
            for _ in 0..share {
                let cohort = COHORTS[rng.gen_range(0..COHORTS.len())];
                let k = KS[rng.gen_range(0..KS.len())];
                let start = Instant::now();
                let resp = client.get(format!("{base}/rankings?method=undr&cohort={cohort}&k={k}")).send().await.unwrap();
                let status = resp.status().as_u16();
                let body: Value = resp.json().await.unwrap();
                out.push((cohort, k, status, compact(&body), start.elapsed()));
            }
            out
        });
    }
    let mut responses = Vec::with_capacity(requests);
    while let Some(batch) = tasks.join_next().await {
        responses.extend(batch.unwrap());
    }
    stop.store(true, Ordering::Relaxed);
    let writes = writer_handle.await.unwrap();

    let mut tables: HashMap<String, Vec<undr_oracles::OracleScore>> = HashMap::new();
    let mut violations = Vec::new();
    let mut max_latency = Duration::ZERO;
    for (cohort, k, status, reply, latency) in &responses {
        max_latency = max_latency.max(*latency);
        let (hash, entries) = match reply {
            Reply::Ranked { hash: Some(hash), entries } if *status == 200 => (hash, entries),
            Reply::Ranked { .. } => {
                violations.push(format!("{cohort} k={k}: status {status}, no provenance"));
                continue;
            }
            Reply::Failed(body) => {
                violations.push(format!("{cohort} k={k}: status {status}: {body}"));
                continue;
            }
        };
        let key = format!("{cohort}:{hash}");
        if !tables.contains_key(&key) {
            let table: WeightTable = client
                .get(format!("{base}/weights/{cohort}?hash={hash}"))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            tables.insert(key.clone(), undr_oracles::rank(&catalog, &oracle_table(&table), &schema));
        }
        let expected = &tables[&key];
        if entries.len() != (*k).min(expected.len()) {
            violations.push(format!("{key} k={k}: {} entries", entries.len()));
            continue;
        }
        for (i, (got, want)) in entries.iter().zip(expected).enumerate() {
            let exact = got.exact_score.as_deref().and_then(ratio_from_str);
            if got.product_id != want.product_id || exact.as_ref() != Some(&want.score) || got.coverage != Some(want.coverage as u64) {
                violations.push(format!("{key} k={k} position {i}: got {}, oracle {}", got.product_id, want.product_id));
                break;
            }
        }
    }
    let distinct_hashes = tables.len();
    Outcome { requests: responses.len(), violations, distinct_hashes, writes, max_latency }
}
