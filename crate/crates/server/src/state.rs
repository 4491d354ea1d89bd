//! Engine state: the active catalog, the finalized record store, live
//! sessions, and the weight-table snapshot that rankings are served from.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use undr_core::needslog::{
    assign_cohort, EventError, EventOutcome, RecordSource, SelectionEvent, SessionAggregator, SessionProfile,
};
use undr_core::ranking::{rank_by_rating, rank_undr, top_k, RankingError};
use undr_core::weights::{build_weight_table, BuildOptions, DenominatorMode, WeightsError, DEFAULT_MIN_POOL};
use undr_core::{CohortSpec, FacetSchema, Product, RankedList, RankingMethod, Selection, SelectionRecord, TaskList, WeightTable, FORMAT_VERSION};

pub const EVENT_LOG: &str = "events.jsonl";
pub const SNAPSHOT_MANIFEST: &str = "snapshot.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub log_dir: PathBuf,
    pub min_pool: usize,
    pub mode: DenominatorMode,
    pub idle_timeout: Duration,
    pub tasks: TaskList,
}

impl ServerConfig {
    pub fn new(log_dir: impl Into<PathBuf>) -> Self {
        Self {
            log_dir: log_dir.into(),
            min_pool: DEFAULT_MIN_POOL,
            mode: DenominatorMode::default(),
            idle_timeout: Duration::minutes(undr_core::needslog::DEFAULT_IDLE_TIMEOUT_MINUTES),
            tasks: TaskList::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("unknown cohort `{0}`")]
    UnknownCohort(String),
    #[error("no weight table for cohort `{0}` yet")]
    NoTable(String),
    #[error("no weight table with hash `{hash}` for cohort `{cohort}`")]
    UnknownTable { cohort: String, hash: String },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("cohort `{cohort}` has {count} records, below the minimum of {min_pool}")]
    BelowMinimumPool { cohort: String, count: usize, min_pool: usize },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StateError + '_ {
    move |source| StateError::Io { path: path.to_owned(), source }
}

#[derive(Debug)]
pub struct CohortSnapshot {
    pub table: Arc<WeightTable>,
    pub ranking: Arc<RankedList>,
}

/// Everything a ranking read needs, swapped as one unit.
#[derive(Debug, Default)]
pub struct Snapshot {
    pub generation: u64,
    pub cohorts: BTreeMap<String, CohortSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Selection { at: DateTime<Utc>, event: SelectionEvent },
    Finalize { at: DateTime<Utc>, session_id: String, profile: SessionProfile },
    Recompute { at: DateTime<Utc>, cohort: Option<String> },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    format_version: u32,
    #[serde(flatten)]
    entry: LogEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format_version: u32,
    pub generation: u64,
    pub record_count: usize,
    pub tables: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortChange {
    pub cohort_id: String,
    pub record_count: usize,
    pub old_hash: Option<String>,
    pub new_hash: String,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCohort {
    pub cohort_id: String,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecomputeReport {
    pub generation: u64,
    pub cohorts: Vec<CohortChange>,
    pub skipped: Vec<SkippedCohort>,
    pub min_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingView {
    pub generation: u64,
    pub k: usize,
    pub ranking: RankedList,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub generation: u64,
    pub record_count: usize,
    pub open_sessions: usize,
    pub source_mix: BTreeMap<String, usize>,
    pub cohorts: BTreeMap<String, String>,
}

struct Writer {
    log: Option<File>,
}

pub struct EngineState {
    schema: Arc<FacetSchema>,
    catalog: Arc<Vec<Product>>,
    config: ServerConfig,
    cohorts: Vec<CohortSpec>,
    baseline: Arc<RankedList>,
    records: RwLock<Vec<SelectionRecord>>,
    sessions: SessionAggregator,
    snapshot: RwLock<Arc<Snapshot>>,
    archive: RwLock<HashMap<String, Arc<WeightTable>>>,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for EngineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineState").field("schema", &self.schema.schema_id).field("log_dir", &self.config.log_dir).finish()
    }
}

fn cohort_key(cohort: Option<&str>) -> String {
    cohort.unwrap_or("*").to_owned()
}

impl EngineState {
    /// Loads the seed records, builds the initial tables, then replays the
    /// event log found in `config.log_dir` (created if missing).
    pub fn open(
        schema: FacetSchema,
        catalog: Vec<Product>,
        seed_records: Vec<SelectionRecord>,
        config: ServerConfig,
    ) -> Result<Self, StateError> {
        let schema = Arc::new(schema);
        let baseline = Arc::new(rank_by_rating(&catalog)?);
        let sessions = SessionAggregator::with_idle_timeout(schema.clone(), config.tasks.clone(), config.idle_timeout);
        let state = Self {
            schema,
            catalog: Arc::new(catalog),
            cohorts: CohortSpec::builtins().to_vec(),
            baseline,
            records: RwLock::new(seed_records),
            sessions,
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            archive: RwLock::new(HashMap::new()),
            writer: Mutex::new(Writer { log: None }),
            config,
        };
        fs::create_dir_all(state.config.log_dir.join(SNAPSHOT_DIR)).map_err(io_err(&state.config.log_dir))?;
        {
            let mut writer = state.writer.lock().expect("writer poisoned");
            state.initial_build()?;
            state.replay()?;
            let path = state.log_path();
            writer.log = Some(OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?);
        }
        state.check_manifest();
        Ok(state)
    }

    /// In-memory state with no event log; nothing is persisted.
    pub fn ephemeral(
        schema: FacetSchema,
        catalog: Vec<Product>,
        seed_records: Vec<SelectionRecord>,
        mut config: ServerConfig,
    ) -> Result<Self, StateError> {
        let schema = Arc::new(schema);
        config.log_dir = PathBuf::new();
        let state = Self {
            baseline: Arc::new(rank_by_rating(&catalog)?),
            sessions: SessionAggregator::with_idle_timeout(schema.clone(), config.tasks.clone(), config.idle_timeout),
            schema,
            catalog: Arc::new(catalog),
            cohorts: CohortSpec::builtins().to_vec(),
            records: RwLock::new(seed_records),
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            archive: RwLock::new(HashMap::new()),
            writer: Mutex::new(Writer { log: None }),
            config,
        };
        state.initial_build()?;
        Ok(state)
    }

    fn persistent(&self) -> bool {
        !self.config.log_dir.as_os_str().is_empty()
    }

    pub fn log_path(&self) -> PathBuf {
        self.config.log_dir.join(EVENT_LOG)
    }

    pub fn schema(&self) -> &FacetSchema {
        &self.schema
    }

    pub fn catalog(&self) -> &[Product] {
        &self.catalog
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot poisoned").clone()
    }

    pub fn records(&self) -> Vec<SelectionRecord> {
        self.records.read().expect("records poisoned").clone()
    }

    fn cohort(&self, cohort_id: &str) -> Result<&CohortSpec, StateError> {
        self.cohorts
            .iter()
            .find(|c| c.cohort_id == cohort_id)
            .ok_or_else(|| StateError::UnknownCohort(cohort_id.to_owned()))
    }

    fn build(&self, records: &[SelectionRecord], cohort: &CohortSpec) -> Result<CohortSnapshot, StateError> {
        let options = BuildOptions { mode: self.config.mode, min_pool: self.config.min_pool };
        let table = build_weight_table(records, &self.schema, cohort, &self.config.tasks, &options)?;
        let ranking = rank_undr(&self.catalog, &table, &self.schema)?;
        Ok(CohortSnapshot { table: Arc::new(table), ranking: Arc::new(ranking) })
    }

    fn initial_build(&self) -> Result<(), StateError> {
        let records = self.records();
        let mut cohorts = BTreeMap::new();
        for spec in &self.cohorts {
            if records.iter().any(|r| assign_cohort(r, spec, &self.config.tasks)) {
                let snap = self.build(&records, spec)?;
                self.archive_table(&snap.table)?;
                cohorts.insert(spec.cohort_id.clone(), snap);
            }
        }
        *self.snapshot.write().expect("snapshot poisoned") = Arc::new(Snapshot { generation: 0, cohorts });
        Ok(())
    }

    fn archive_table(&self, table: &Arc<WeightTable>) -> Result<(), StateError> {
        let key = format!("{}:{}", table.cohort_id, table.hash());
        let fresh = self.archive.write().expect("archive poisoned").insert(key, table.clone()).is_none();
        if fresh && self.persistent() {
            let path = self.config.log_dir.join(SNAPSHOT_DIR).join(format!("{}-{}.json", table.cohort_id, table.hash()));
            if !path.exists() {
                write_atomically(&path, table.to_json().as_bytes())?;
            }
        }
        Ok(())
    }

    fn replay(&self) -> Result<(), StateError> {
        let path = self.log_path();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut replayed = 0usize;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)
                .map_err(|e| StateError::CorruptLog { line: i + 1, message: e.to_string() })?;
            if parsed.format_version != FORMAT_VERSION {
                return Err(StateError::CorruptLog {
                    line: i + 1,
                    message: format!("format_version {} (expected {FORMAT_VERSION})", parsed.format_version),
                });
            }
            self.apply_entry(&parsed.entry)
                .map_err(|e| StateError::CorruptLog { line: i + 1, message: e.to_string() })?;
            replayed += 1;
        }
        log::info!("replayed {replayed} events from {}", path.display());
        Ok(())
    }

    fn apply_entry(&self, entry: &LogEntry) -> Result<(), StateError> {
        match entry {
            LogEntry::Selection { at, event } => {
                self.sessions.apply(event, *at)?;
            }
            LogEntry::Finalize { at, session_id, profile } => {
                self.finalize_inner(session_id, profile, *at)?;
            }
            LogEntry::Recompute { cohort, .. } => match self.recompute_inner(cohort.as_deref()) {
                Err(e @ StateError::BelowMinimumPool { .. }) => log::warn!("skipping logged recompute: {e}"),
                other => {
                    other?;
                }
            },
        }
        Ok(())
    }

    fn append(&self, writer: &mut Writer, entry: LogEntry) -> Result<(), StateError> {
        if let Some(file) = writer.log.as_mut() {
            let mut line = serde_json::to_string(&LogLine { format_version: FORMAT_VERSION, entry }).expect("log entry serializes");
            line.push('\n');
            let path = self.log_path();
            file.write_all(line.as_bytes()).map_err(io_err(&path))?;
            file.flush().map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Applies one live selection event and appends it to the log.
    pub fn post_selection(&self, event: &SelectionEvent, now: DateTime<Utc>) -> Result<EventOutcome, StateError> {
        self.sessions.check(event)?;
        let mut writer = self.writer.lock().expect("writer poisoned");
        let outcome = self.sessions.apply(event, now)?;
        self.append(&mut writer, LogEntry::Selection { at: now, event: event.clone() })?;
        Ok(outcome)
    }

    pub fn pending(&self, session_id: &str) -> Result<BTreeMap<String, Selection>, StateError> {
        self.sessions.pending(session_id).ok_or_else(|| StateError::UnknownSession(session_id.to_owned()))
    }

    fn finalize_inner(
        &self,
        session_id: &str,
        profile: &SessionProfile,
        now: DateTime<Utc>,
    ) -> Result<(SelectionRecord, bool), StateError> {
        let (record, fresh) = self.sessions.finalize(session_id, profile, now)?;
        if fresh {
            self.records.write().expect("records poisoned").push(record.clone());
        }
        Ok((record, fresh))
    }

    /// Finalizes a session into a record. Repeated calls return the same
    /// record and `false`.
    pub fn finalize(
        &self,
        session_id: &str,
        profile: &SessionProfile,
        now: DateTime<Utc>,
    ) -> Result<(SelectionRecord, bool), StateError> {
        let mut writer = self.writer.lock().expect("writer poisoned");
        let (record, fresh) = self.finalize_inner(session_id, profile, now)?;
        if fresh {
            self.append(
                &mut writer,
                LogEntry::Finalize { at: now, session_id: session_id.to_owned(), profile: profile.clone() },
            )?;
        }
        Ok((record, fresh))
    }

    /// Finalizes every session idle for longer than the configured timeout.
    pub fn sweep_idle(&self, now: DateTime<Utc>) -> Result<Vec<SelectionRecord>, StateError> {
        let mut out = Vec::new();
        for id in self.sessions.idle_sessions(now) {
            let (record, fresh) = self.finalize(&id, &SessionProfile::default(), now)?;
            if fresh {
                out.push(record);
            }
        }
        Ok(out)
    }

    fn recompute_inner(&self, cohort: Option<&str>) -> Result<RecomputeReport, StateError> {
        let targets: Vec<&CohortSpec> = match cohort {
            Some(id) => vec![self.cohort(id)?],
            None => self.cohorts.iter().collect(),
        };
        let records = self.records();
        let current = self.snapshot();
        let mut built = BTreeMap::new();
        let mut skipped = Vec::new();
        for spec in &targets {
            let count = records.iter().filter(|r| assign_cohort(r, spec, &self.config.tasks)).count();
            if count < self.config.min_pool {
                if cohort.is_some() {
                    return Err(StateError::BelowMinimumPool {
                        cohort: spec.cohort_id.clone(),
                        count,
                        min_pool: self.config.min_pool,
                    });
                }
                skipped.push(SkippedCohort { cohort_id: spec.cohort_id.clone(), record_count: count });
                continue;
            }
            built.insert(spec.cohort_id.clone(), (count, self.build(&records, spec)?));
        }
        if built.is_empty() {
            let count = skipped.iter().map(|s| s.record_count).max().unwrap_or(0);
            return Err(StateError::BelowMinimumPool { cohort: cohort_key(cohort), count, min_pool: self.config.min_pool });
        }

        let mut changes = Vec::new();
        let mut next: BTreeMap<String, CohortSnapshot> = current
            .cohorts
            .iter()
            .map(|(k, v)| (k.clone(), CohortSnapshot { table: v.table.clone(), ranking: v.ranking.clone() }))
            .collect();
        for (id, (count, snap)) in built {
            let old_hash = current.cohorts.get(&id).map(|c| c.table.hash().to_owned());
            let new_hash = snap.table.hash().to_owned();
            let changed = old_hash.as_deref() != Some(new_hash.as_str());
            changes.push(CohortChange { cohort_id: id.clone(), record_count: count, old_hash, new_hash, changed });
            if changed {
                self.archive_table(&snap.table)?;
                next.insert(id, snap);
            }
        }
        let any_change = changes.iter().any(|c| c.changed);
        let generation = if any_change { current.generation + 1 } else { current.generation };
        if any_change {
            *self.snapshot.write().expect("snapshot poisoned") = Arc::new(Snapshot { generation, cohorts: next });
        }
        Ok(RecomputeReport { generation, cohorts: changes, skipped, min_pool: self.config.min_pool })
    }

    /// Rebuilds the weight tables of one cohort, or of every cohort, from
    /// all finalized records and swaps them in atomically.
    pub fn recompute(&self, cohort: Option<&str>, now: DateTime<Utc>) -> Result<RecomputeReport, StateError> {
        let mut writer = self.writer.lock().expect("writer poisoned");
        let report = self.recompute_inner(cohort)?;
        self.append(&mut writer, LogEntry::Recompute { at: now, cohort: cohort.map(str::to_owned) })?;
        self.write_manifest()?;
        Ok(report)
    }

    fn manifest(&self) -> SnapshotManifest {
        let snap = self.snapshot();
        SnapshotManifest {
            format_version: FORMAT_VERSION,
            generation: snap.generation,
            record_count: self.records.read().expect("records poisoned").len(),
            tables: snap.cohorts.iter().map(|(k, v)| (k.clone(), v.table.hash().to_owned())).collect(),
        }
    }

    fn write_manifest(&self) -> Result<(), StateError> {
        if !self.persistent() {
            return Ok(());
        }
        let json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write_atomically(&self.config.log_dir.join(SNAPSHOT_MANIFEST), json.as_bytes())
    }

    fn check_manifest(&self) {
        let path = self.config.log_dir.join(SNAPSHOT_MANIFEST);
        let Ok(text) = fs::read_to_string(&path) else { return };
        match serde_json::from_str::<SnapshotManifest>(&text) {
            Ok(saved) if saved.tables != self.manifest().tables => {
                log::warn!("{} disagrees with the replayed state; seed records may have changed", path.display())
            }
            Ok(_) => {}
            Err(e) => log::warn!("ignoring unreadable {}: {e}", path.display()),
        }
    }

    pub fn ranking(&self, method: RankingMethod, cohort_id: &str, k: usize) -> Result<RankingView, StateError> {
        match method {
            RankingMethod::RatingBaseline => Ok(RankingView { generation: self.snapshot().generation, k, ranking: top_k(&self.baseline, k) }),
            RankingMethod::Undr => {
                self.cohort(cohort_id)?;
                let snap = self.snapshot();
                let entry = snap.cohorts.get(cohort_id).ok_or_else(|| StateError::NoTable(cohort_id.to_owned()))?;
                Ok(RankingView { generation: snap.generation, k, ranking: top_k(&entry.ranking, k) })
            }
        }
    }

    /// The cohort's current table, or an earlier one by hash.
    pub fn table(&self, cohort_id: &str, hash: Option<&str>) -> Result<Arc<WeightTable>, StateError> {
        self.cohort(cohort_id)?;
        match hash {
            Some(h) => self
                .archive
                .read()
                .expect("archive poisoned")
                .get(&format!("{cohort_id}:{h}"))
                .cloned()
                .ok_or_else(|| StateError::UnknownTable { cohort: cohort_id.to_owned(), hash: h.to_owned() }),
            None => self
                .snapshot()
                .cohorts
                .get(cohort_id)
                .map(|c| c.table.clone())
                .ok_or_else(|| StateError::NoTable(cohort_id.to_owned())),
        }
    }

    pub fn health(&self) -> Health {
        let records = self.records.read().expect("records poisoned");
        let mut source_mix = BTreeMap::new();
        for r in records.iter() {
            let key = match r.source {
                RecordSource::Survey => "survey",
                RecordSource::LiveEvent => "live_event",
            };
            *source_mix.entry(key.to_owned()).or_insert(0) += 1;
        }
        let snap = self.snapshot();
        Health {
            generation: snap.generation,
            record_count: records.len(),
            open_sessions: self.sessions.open_session_count(),
            source_mix,
            cohorts: snap.cohorts.iter().map(|(k, v)| (k.clone(), v.table.hash().to_owned())).collect(),
        }
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), StateError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
