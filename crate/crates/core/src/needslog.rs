//! Facet-selection records: ingestion, validation, cohorts and live sessions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::FacetSchema;
use crate::FORMAT_VERSION;

#[derive(Debug, Error)]
pub enum NeedsLogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: unsupported format_version {found} (expected {expected})")]
    Format { line: usize, found: u32, expected: u32 },
    #[error("csv: {0}")]
    Csv(String),
}

/// What a user chose for one facet: explicitly "any", or a non-empty set of bins.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Selection {
    Any,
    Values(BTreeSet<String>),
}

impl Selection {
    pub fn values<'a>(bins: impl IntoIterator<Item = &'a str>) -> Self {
        Selection::Values(bins.into_iter().map(str::to_owned).collect())
    }

    pub fn is_any(&self) -> bool {
        matches!(self, Selection::Any)
    }

    pub fn bins(&self) -> impl Iterator<Item = &str> {
        let set = match self {
            Selection::Any => None,
            Selection::Values(v) => Some(v),
        };
        set.into_iter().flatten().map(String::as_str)
    }

    /// Parses the CSV cell form: `any` or `;`-separated bin ids.
    pub fn parse_cell(cell: &str) -> Selection {
        let cell = cell.trim();
        if cell.eq_ignore_ascii_case("any") {
            return Selection::Any;
        }
        Selection::Values(cell.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect())
    }
}

impl Serialize for Selection {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Selection::Any => serializer.serialize_str("any"),
            Selection::Values(v) => v.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Selection {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(BTreeSet<String>),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Text(s) if s.trim().eq_ignore_ascii_case("any") => Ok(Selection::Any),
            Raw::Text(s) => Err(de::Error::custom(format!("expected \"any\" or a list of bin ids, got {s:?}"))),
            Raw::List(v) => Ok(Selection::Values(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    #[default]
    Survey,
    LiveEvent,
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub record_id: String,
    pub selections: BTreeMap<String, Selection>,
    #[serde(default)]
    pub usage_tasks: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_knowledge: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub source: RecordSource,
    #[serde(default = "epoch")]
    pub timestamp: DateTime<Utc>,
}

impl SelectionRecord {
    /// A record that answers "any" for every facet of `schema`.
    pub fn all_any(record_id: impl Into<String>, schema: &FacetSchema) -> Self {
        Self {
            record_id: record_id.into(),
            selections: schema.facet_ids().map(|f| (f.to_owned(), Selection::Any)).collect(),
            usage_tasks: BTreeSet::new(),
            domain_knowledge: None,
            demographics: None,
            source: RecordSource::Survey,
            timestamp: epoch(),
        }
    }

    pub fn selection(&self, facet_id: &str) -> Option<&Selection> {
        self.selections.get(facet_id)
    }
}

/// The configurable list of usage tasks and its advanced subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskList {
    pub tasks: BTreeSet<String>,
    pub advanced: BTreeSet<String>,
}

pub const DEFAULT_TASKS: [&str; 10] = [
    "basic_tasks",
    "office_work",
    "studying",
    "streaming",
    "video_conferencing",
    "social_media",
    "casual_gaming",
    "digital_editing",
    "software_development",
    "high_level_gaming",
];

pub const DEFAULT_ADVANCED_TASKS: [&str; 3] = ["digital_editing", "software_development", "high_level_gaming"];

impl Default for TaskList {
    fn default() -> Self {
        Self {
            tasks: DEFAULT_TASKS.iter().map(|s| s.to_string()).collect(),
            advanced: DEFAULT_ADVANCED_TASKS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TaskList {
    pub fn new(tasks: BTreeSet<String>, advanced: BTreeSet<String>) -> Result<Self, String> {
        if let Some(t) = advanced.iter().find(|t| !tasks.contains(*t)) {
            return Err(format!("advanced task `{t}` is not in the task list"));
        }
        Ok(Self { tasks, advanced })
    }

    pub fn is_advanced_user(&self, usage_tasks: &BTreeSet<String>) -> bool {
        usage_tasks.iter().any(|t| self.advanced.contains(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CohortRule {
    All,
    Basic,
    Advanced,
    /// Matches records whose tasks include at least one of `any_of` (when
    /// non-empty), all of `all_of`, and none of `none_of`.
    Custom {
        #[serde(default)]
        any_of: BTreeSet<String>,
        #[serde(default)]
        all_of: BTreeSet<String>,
        #[serde(default)]
        none_of: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub cohort_id: String,
    pub rule: CohortRule,
}

impl CohortSpec {
    pub fn all() -> Self {
        Self { cohort_id: "all".into(), rule: CohortRule::All }
    }

    pub fn basic() -> Self {
        Self { cohort_id: "basic".into(), rule: CohortRule::Basic }
    }

    pub fn advanced() -> Self {
        Self { cohort_id: "advanced".into(), rule: CohortRule::Advanced }
    }

    /// Resolves the three built-in cohort ids.
    pub fn builtin(cohort_id: &str) -> Option<Self> {
        match cohort_id {
            "all" => Some(Self::all()),
            "basic" => Some(Self::basic()),
            "advanced" => Some(Self::advanced()),
            _ => None,
        }
    }

    pub fn builtins() -> [CohortSpec; 3] {
        [Self::all(), Self::basic(), Self::advanced()]
    }
}

pub fn assign_cohort(record: &SelectionRecord, spec: &CohortSpec, tasks: &TaskList) -> bool {
    match &spec.rule {
        CohortRule::All => true,
        CohortRule::Basic => !tasks.is_advanced_user(&record.usage_tasks),
        CohortRule::Advanced => tasks.is_advanced_user(&record.usage_tasks),
        CohortRule::Custom { any_of, all_of, none_of } => {
            let t = &record.usage_tasks;
            (any_of.is_empty() || any_of.iter().any(|x| t.contains(x)))
                && all_of.iter().all(|x| t.contains(x))
                && !none_of.iter().any(|x| t.contains(x))
        }
    }
}

/// Splits records into the `all`, `basic` and `advanced` cohorts.
pub fn cohort_partition(records: &[SelectionRecord], tasks: &TaskList) -> BTreeMap<String, Vec<SelectionRecord>> {
    let mut out: BTreeMap<String, Vec<SelectionRecord>> = BTreeMap::new();
    for spec in CohortSpec::builtins() {
        let members = records.iter().filter(|r| assign_cohort(r, &spec, tasks)).cloned().collect();
        out.insert(spec.cohort_id, members);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum RejectionReason {
    Malformed { message: String },
    DuplicateRecordId,
    UnknownFacet { facet_id: String },
    MissingFacet { facet_id: String },
    UnknownBin { facet_id: String, bin_id: String },
    EmptySelection { facet_id: String },
    UnknownTask { task: String },
    DomainKnowledgeOutOfRange { value: u8 },
    Excluded { rule: String },
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectionReason::Malformed { message } => write!(f, "malformed record: {message}"),
            RejectionReason::DuplicateRecordId => write!(f, "duplicate record_id"),
            RejectionReason::UnknownFacet { facet_id } => write!(f, "unknown facet `{facet_id}`"),
            RejectionReason::MissingFacet { facet_id } => write!(f, "no selection for facet `{facet_id}`"),
            RejectionReason::UnknownBin { facet_id, bin_id } => write!(f, "unknown bin `{bin_id}` in facet `{facet_id}`"),
            RejectionReason::EmptySelection { facet_id } => write!(f, "empty selection for facet `{facet_id}`"),
            RejectionReason::UnknownTask { task } => write!(f, "unknown usage task `{task}`"),
            RejectionReason::DomainKnowledgeOutOfRange { value } => write!(f, "domain_knowledge {value} outside 1..=5"),
            RejectionReason::Excluded { rule } => write!(f, "excluded by rule `{rule}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub record_id: Option<String>,
    pub reason: RejectionReason,
}

/// Checks a record against the schema and task list.
pub fn validate_record(record: &SelectionRecord, schema: &FacetSchema, tasks: &TaskList) -> Result<(), RejectionReason> {
    if record.record_id.trim().is_empty() {
        return Err(RejectionReason::Malformed { message: "empty record_id".into() });
    }
    for facet_id in record.selections.keys() {
        if schema.facet(facet_id).is_none() {
            return Err(RejectionReason::UnknownFacet { facet_id: facet_id.clone() });
        }
    }
    for facet in &schema.facets {
        match record.selections.get(&facet.facet_id) {
            None => return Err(RejectionReason::MissingFacet { facet_id: facet.facet_id.clone() }),
            Some(Selection::Any) => {}
            Some(Selection::Values(bins)) => {
                if bins.is_empty() {
                    return Err(RejectionReason::EmptySelection { facet_id: facet.facet_id.clone() });
                }
                if let Some(bin) = bins.iter().find(|b| !facet.has_bin(b)) {
                    return Err(RejectionReason::UnknownBin { facet_id: facet.facet_id.clone(), bin_id: bin.clone() });
                }
            }
        }
    }
    if let Some(task) = record.usage_tasks.iter().find(|t| !tasks.tasks.contains(*t)) {
        return Err(RejectionReason::UnknownTask { task: task.clone() });
    }
    if let Some(dk) = record.domain_knowledge {
        if !(1..=5).contains(&dk) {
            return Err(RejectionReason::DomainKnowledgeOutOfRange { value: dk });
        }
    }
    Ok(())
}

type Predicate = dyn Fn(&SelectionRecord) -> bool + Send + Sync;

/// A named ingestion filter; matching records are rejected as `Excluded`.
#[derive(Clone)]
pub struct Exclusion {
    pub name: String,
    predicate: Arc<Predicate>,
}

impl Exclusion {
    pub fn new(name: impl Into<String>, predicate: impl Fn(&SelectionRecord) -> bool + Send + Sync + 'static) -> Self {
        Self { name: name.into(), predicate: Arc::new(predicate) }
    }

    /// Excludes records whose `demographics[key]` equals `value`.
    pub fn demographic_equals(key: &str, value: serde_json::Value) -> Self {
        let name = format!("{key}={value}");
        let key = key.to_owned();
        Self::new(name, move |r| r.demographics.as_ref().and_then(|d| d.get(&key)) == Some(&value))
    }

    /// Parses `key=value`, where value is JSON if it parses as JSON and a string otherwise.
    pub fn parse_flag(flag: &str) -> Result<Self, String> {
        let (key, raw) = flag.split_once('=').ok_or_else(|| format!("expected key=value, got `{flag}`"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_owned()));
        Ok(Self::demographic_equals(key.trim(), value))
    }

    pub fn excludes(&self, record: &SelectionRecord) -> bool {
        (self.predicate)(record)
    }
}

impl fmt::Debug for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Exclusion").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub tasks: TaskList,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    JsonLines,
    Csv,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseOutcome {
    pub records: Vec<SelectionRecord>,
    pub rejected: Vec<RejectedRecord>,
}

struct Accumulator<'a> {
    schema: &'a FacetSchema,
    options: &'a ParseOptions,
    seen: HashSet<String>,
    out: ParseOutcome,
}

impl<'a> Accumulator<'a> {
    fn new(schema: &'a FacetSchema, options: &'a ParseOptions) -> Self {
        Self { schema, options, seen: HashSet::new(), out: ParseOutcome::default() }
    }

    fn reject(&mut self, line: usize, record_id: Option<String>, reason: RejectionReason) {
        self.out.rejected.push(RejectedRecord { line, record_id, reason });
    }

    fn offer(&mut self, line: usize, record: SelectionRecord) {
        let id = Some(record.record_id.clone());
        if let Err(reason) = validate_record(&record, self.schema, &self.options.tasks) {
            return self.reject(line, id, reason);
        }
        if let Some(rule) = self.options.exclusions.iter().find(|x| x.excludes(&record)) {
            return self.reject(line, id, RejectionReason::Excluded { rule: rule.name.clone() });
        }
        if !self.seen.insert(record.record_id.clone()) {
            return self.reject(line, id, RejectionReason::DuplicateRecordId);
        }
        self.out.records.push(record);
    }
}

/// Reads selection records. Invalid records are returned with a reason;
/// only stream-level problems are errors.
pub fn parse_records(
    reader: impl Read,
    format: RecordFormat,
    schema: &FacetSchema,
    options: &ParseOptions,
) -> Result<ParseOutcome, NeedsLogError> {
    match format {
        RecordFormat::JsonLines => parse_jsonl(std::io::BufReader::new(reader), schema, options),
        RecordFormat::Csv => parse_csv(reader, schema, options),
    }
}

fn parse_jsonl(reader: impl BufRead, schema: &FacetSchema, options: &ParseOptions) -> Result<ParseOutcome, NeedsLogError> {
    let mut acc = Accumulator::new(schema, options);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                acc.reject(line_no, None, RejectionReason::Malformed { message: e.to_string() });
                continue;
            }
        };
        if let Some(found) = value.get("format_version") {
            match found.as_u64() {
                Some(v) if v == FORMAT_VERSION as u64 => {}
                other => {
                    return Err(NeedsLogError::Format {
                        line: line_no,
                        found: other.unwrap_or(0) as u32,
                        expected: FORMAT_VERSION,
                    })
                }
            }
        }
        let record_id = value.get("record_id").and_then(|v| v.as_str()).map(str::to_owned);
        match serde_json::from_value::<SelectionRecord>(value) {
            Ok(record) => acc.offer(line_no, record),
            Err(e) => acc.reject(line_no, record_id, RejectionReason::Malformed { message: e.to_string() }),
        }
    }
    Ok(acc.out)
}

/// CSV convention: `record_id`, optional `source`, `timestamp` (RFC 3339),
/// `domain_knowledge`, `usage_tasks` (`;`-separated), `format_version`,
/// `demo:<key>` demographic columns, and one `facet:<id>` column per facet
/// holding `any` or `;`-separated bin ids.
fn parse_csv(reader: impl Read, schema: &FacetSchema, options: &ParseOptions) -> Result<ParseOutcome, NeedsLogError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| NeedsLogError::Csv(e.to_string()))?.clone();
    let mut acc = Accumulator::new(schema, options);
    for (idx, row) in rdr.records().enumerate() {
        // header is line 1
        let line_no = idx + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(NeedsLogError::Csv(e.to_string()));
                }
                acc.reject(line_no, None, RejectionReason::Malformed { message: e.to_string() });
                continue;
            }
        };
        match csv_row_to_record(&headers, &row, line_no)? {
            Ok(record) => acc.offer(line_no, record),
            Err((id, reason)) => acc.reject(line_no, id, reason),
        }
    }
    Ok(acc.out)
}

type RowResult = Result<SelectionRecord, (Option<String>, RejectionReason)>;

fn csv_row_to_record(headers: &csv::StringRecord, row: &csv::StringRecord, line: usize) -> Result<RowResult, NeedsLogError> {
    let mut record = SelectionRecord {
        record_id: String::new(),
        selections: BTreeMap::new(),
        usage_tasks: BTreeSet::new(),
        domain_knowledge: None,
        demographics: None,
        source: RecordSource::Survey,
        timestamp: epoch(),
    };
    let mut demographics = serde_json::Map::new();
    let mut problem = None;
    for (header, cell) in headers.iter().zip(row.iter()) {
        if let Some(facet) = header.strip_prefix("facet:") {
            record.selections.insert(facet.to_owned(), Selection::parse_cell(cell));
            continue;
        }
        if let Some(key) = header.strip_prefix("demo:") {
            if !cell.is_empty() {
                demographics.insert(key.to_owned(), serde_json::Value::String(cell.to_owned()));
            }
            continue;
        }
        match header {
            "record_id" => record.record_id = cell.to_owned(),
            "format_version" if !cell.is_empty() => {
                let found: u32 = cell.parse().unwrap_or(0);
                if found != FORMAT_VERSION {
                    return Err(NeedsLogError::Format { line, found, expected: FORMAT_VERSION });
                }
            }
            "source" if !cell.is_empty() => match cell {
                "survey" => record.source = RecordSource::Survey,
                "live_event" => record.source = RecordSource::LiveEvent,
                other => problem = Some(format!("unknown source `{other}`")),
            },
            "timestamp" if !cell.is_empty() => match DateTime::parse_from_rfc3339(cell) {
                Ok(ts) => record.timestamp = ts.with_timezone(&Utc),
                Err(e) => problem = Some(format!("bad timestamp: {e}")),
            },
            "domain_knowledge" if !cell.is_empty() => match cell.parse::<u8>() {
                Ok(v) => record.domain_knowledge = Some(v),
                Err(e) => problem = Some(format!("bad domain_knowledge: {e}")),
            },
            "usage_tasks" => {
                record.usage_tasks = cell.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
            }
            _ => {}
        }
    }
    if !demographics.is_empty() {
        record.demographics = Some(demographics);
    }
    let id = (!record.record_id.is_empty()).then(|| record.record_id.clone());
    Ok(match problem {
        Some(message) => Err((id, RejectionReason::Malformed { message })),
        None => Ok(record),
    })
}

/// Writes records as JSON Lines, each tagged with `format_version`.
pub fn write_records(mut out: impl std::io::Write, records: &[SelectionRecord]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Versioned<'a> {
        format_version: u32,
        #[serde(flatten)]
        record: &'a SelectionRecord,
    }
    for record in records {
        serde_json::to_writer(&mut out, &Versioned { format_version: FORMAT_VERSION, record })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Live sessions

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum EventError {
    #[error("unknown facet `{facet_id}`")]
    UnknownFacet { facet_id: String },
    #[error("unknown bin `{bin_id}` in facet `{facet_id}`")]
    UnknownBin { facet_id: String, bin_id: String },
    #[error("empty selection for facet `{facet_id}`")]
    EmptySelection { facet_id: String },
    #[error("unknown usage task `{task}`")]
    UnknownTask { task: String },
    #[error("domain_knowledge {value} outside 1..=5")]
    DomainKnowledgeOutOfRange { value: u8 },
    #[error("session `{session_id}` is already finalized")]
    SessionFinalized { session_id: String },
    #[error("empty session id")]
    EmptySessionId,
}

/// One facet change from the shop UI. The selection replaces whatever the
/// session held for that facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub session_id: String,
    pub facet_id: String,
    pub selection: Selection,
    #[serde(default)]
    pub sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Applied,
    /// Same facet, sequence and selection as an event already applied.
    Duplicate,
    /// Older than the latest event applied for this facet; ignored.
    Stale,
}

/// Profile fields supplied when a session is finalized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionProfile {
    #[serde(default)]
    pub usage_tasks: BTreeSet<String>,
    #[serde(default)]
    pub domain_knowledge: Option<u8>,
    #[serde(default)]
    pub demographics: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug)]
struct PendingSession {
    selections: BTreeMap<String, (u64, Selection)>,
    last_activity: DateTime<Utc>,
    finalized: Option<SelectionRecord>,
}

/// Folds per-facet UI events into one [`SelectionRecord`] per session.
///
/// Distinct sessions proceed in parallel; events for one session are
/// serialized by that session's lock.
#[derive(Debug)]
pub struct SessionAggregator {
    schema: Arc<FacetSchema>,
    tasks: TaskList,
    idle_timeout: Duration,
    sessions: RwLock<HashMap<String, Arc<Mutex<PendingSession>>>>,
}

pub const DEFAULT_IDLE_TIMEOUT_MINUTES: i64 = 30;

impl SessionAggregator {
    pub fn new(schema: Arc<FacetSchema>, tasks: TaskList) -> Self {
        Self::with_idle_timeout(schema, tasks, Duration::minutes(DEFAULT_IDLE_TIMEOUT_MINUTES))
    }

    pub fn with_idle_timeout(schema: Arc<FacetSchema>, tasks: TaskList, idle_timeout: Duration) -> Self {
        Self { schema, tasks, idle_timeout, sessions: RwLock::new(HashMap::new()) }
    }

    fn session(&self, session_id: &str, now: DateTime<Utc>) -> Arc<Mutex<PendingSession>> {
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(session_id) {
            return s.clone();
        }
        let mut map = self.sessions.write().expect("session map poisoned");
        map.entry(session_id.to_owned())
            .or_insert_with(|| {
                Arc::new(Mutex::new(PendingSession { selections: BTreeMap::new(), last_activity: now, finalized: None }))
            })
            .clone()
    }

    /// Validates an event against the schema without touching any session.
    pub fn check(&self, event: &SelectionEvent) -> Result<(), EventError> {
        if event.session_id.trim().is_empty() {
            return Err(EventError::EmptySessionId);
        }
        let facet = self
            .schema
            .facet(&event.facet_id)
            .ok_or_else(|| EventError::UnknownFacet { facet_id: event.facet_id.clone() })?;
        if let Selection::Values(bins) = &event.selection {
            if bins.is_empty() {
                return Err(EventError::EmptySelection { facet_id: event.facet_id.clone() });
            }
            if let Some(bin) = bins.iter().find(|b| !facet.has_bin(b)) {
                return Err(EventError::UnknownBin { facet_id: event.facet_id.clone(), bin_id: bin.clone() });
            }
        }
        Ok(())
    }

    pub fn apply(&self, event: &SelectionEvent, now: DateTime<Utc>) -> Result<EventOutcome, EventError> {
        self.check(event)?;
        let session = self.session(&event.session_id, now);
        let mut s = session.lock().expect("session poisoned");
        if s.finalized.is_some() {
            return Err(EventError::SessionFinalized { session_id: event.session_id.clone() });
        }
        let outcome = match s.selections.get(&event.facet_id) {
            Some((seq, sel)) if *seq == event.sequence && *sel == event.selection => EventOutcome::Duplicate,
            Some((seq, _)) if *seq >= event.sequence => EventOutcome::Stale,
            _ => {
                s.selections.insert(event.facet_id.clone(), (event.sequence, event.selection.clone()));
                EventOutcome::Applied
            }
        };
        s.last_activity = now;
        Ok(outcome)
    }

    /// Current selections for every facet; untouched facets read as "any".
    pub fn pending(&self, session_id: &str) -> Option<BTreeMap<String, Selection>> {
        let session = self.sessions.read().expect("session map poisoned").get(session_id)?.clone();
        let s = session.lock().expect("session poisoned");
        Some(self.complete(&s))
    }

    fn complete(&self, s: &PendingSession) -> BTreeMap<String, Selection> {
        self.schema
            .facet_ids()
            .map(|f| (f.to_owned(), s.selections.get(f).map_or(Selection::Any, |(_, sel)| sel.clone())))
            .collect()
    }

    /// Turns the session into a record. Finalizing again returns the same
    /// record with `false`.
    pub fn finalize(
        &self,
        session_id: &str,
        profile: &SessionProfile,
        now: DateTime<Utc>,
    ) -> Result<(SelectionRecord, bool), EventError> {
        if session_id.trim().is_empty() {
            return Err(EventError::EmptySessionId);
        }
        if let Some(task) = profile.usage_tasks.iter().find(|t| !self.tasks.tasks.contains(*t)) {
            return Err(EventError::UnknownTask { task: task.clone() });
        }
        if let Some(dk) = profile.domain_knowledge.filter(|v| !(1..=5).contains(v)) {
            return Err(EventError::DomainKnowledgeOutOfRange { value: dk });
        }
        let session = self.session(session_id, now);
        let mut s = session.lock().expect("session poisoned");
        if let Some(record) = &s.finalized {
            return Ok((record.clone(), false));
        }
        let record = SelectionRecord {
            record_id: format!("session:{session_id}"),
            selections: self.complete(&s),
            usage_tasks: profile.usage_tasks.clone(),
            domain_knowledge: profile.domain_knowledge,
            demographics: profile.demographics.clone(),
            source: RecordSource::LiveEvent,
            timestamp: now,
        };
        s.finalized = Some(record.clone());
        s.last_activity = now;
        Ok((record, true))
    }

    /// Sessions idle for at least the timeout and not yet finalized.
    pub fn idle_sessions(&self, now: DateTime<Utc>) -> Vec<String> {
        let map = self.sessions.read().expect("session map poisoned");
        let mut ids: Vec<String> = map
            .iter()
            .filter(|(_, s)| {
                let s = s.lock().expect("session poisoned");
                s.finalized.is_none() && now - s.last_activity >= self.idle_timeout
            })
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Finalizes every idle session with an empty profile.
    pub fn finalize_idle(&self, now: DateTime<Utc>) -> Vec<SelectionRecord> {
        self.idle_sessions(now)
            .into_iter()
            .filter_map(|id| match self.finalize(&id, &SessionProfile::default(), now) {
                Ok((record, true)) => Some(record),
                _ => None,
            })
            .collect()
    }

    pub fn open_session_count(&self) -> usize {
        let map = self.sessions.read().expect("session map poisoned");
        map.values().filter(|s| s.lock().expect("session poisoned").finalized.is_none()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{FacetDef, FacetKind, ValueBin};

    fn schema() -> FacetSchema {
        let facet = |id: &str, bins: &[&str]| FacetDef {
            facet_id: id.into(),
            label: id.into(),
            kind: FacetKind::Categorical,
            values: bins.iter().map(|b| ValueBin::categorical(b, b, [*b])).collect(),
            unit: None,
        };
        FacetSchema::new(
            "t",
            vec![facet("price", &["low", "mid", "high"]), facet("screen_size", &["12-14", "14.1-16"])],
        )
        .unwrap()
    }

    fn parse(text: &str) -> ParseOutcome {
        parse_records(text.as_bytes(), RecordFormat::JsonLines, &schema(), &ParseOptions::default()).unwrap()
    }

    #[test]
    fn selection_serde() {
        assert_eq!(serde_json::to_string(&Selection::Any).unwrap(), "\"any\"");
        assert_eq!(serde_json::from_str::<Selection>("\"ANY\"").unwrap(), Selection::Any);
        assert_eq!(serde_json::from_str::<Selection>("[\"b\",\"a\"]").unwrap(), Selection::values(["a", "b"]));
        assert!(serde_json::from_str::<Selection>("\"low\"").is_err());
    }

    #[test]
    fn all_any_record_is_valid() {
        let out = parse(r#"{"record_id":"r1","selections":{"price":"any","screen_size":"any"}}"#);
        assert_eq!(out.records.len(), 1);
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn rejection_reasons() {
        let text = [
            r#"{"record_id":"a","selections":{"price":["low"],"screen_size":["13-14"]}}"#,
            r#"{"record_id":"b","selections":{"price":[],"screen_size":"any"}}"#,
            r#"{"record_id":"c","selections":{"price":"any"}}"#,
            r#"{"record_id":"d","selections":{"price":"any","screen_size":"any","ram":"any"}}"#,
            r#"{"record_id":"e","selections":{"price":"any","screen_size":"any"},"usage_tasks":["knitting"]}"#,
            r#"not json"#,
            r#"{"record_id":"f","selections":{"price":"any","screen_size":"any"},"domain_knowledge":9}"#,
            r#"{"record_id":"g","selections":{"price":"any","screen_size":"any"}}"#,
            r#"{"record_id":"g","selections":{"price":"any","screen_size":"any"}}"#,
        ]
        .join("\n");
        let out = parse(&text);
        assert_eq!(out.records.len(), 1);
        let reasons: Vec<_> = out.rejected.iter().map(|r| (r.line, r.reason.clone())).collect();
        assert_eq!(
            reasons,
            vec![
                (1, RejectionReason::UnknownBin { facet_id: "screen_size".into(), bin_id: "13-14".into() }),
                (2, RejectionReason::EmptySelection { facet_id: "price".into() }),
                (3, RejectionReason::MissingFacet { facet_id: "screen_size".into() }),
                (4, RejectionReason::UnknownFacet { facet_id: "ram".into() }),
                (5, RejectionReason::UnknownTask { task: "knitting".into() }),
                (6, RejectionReason::Malformed { message: "expected ident at line 1 column 2".into() }),
                (7, RejectionReason::DomainKnowledgeOutOfRange { value: 9 }),
                (9, RejectionReason::DuplicateRecordId),
            ]
        );
    }

    #[test]
    fn format_version_mismatch_is_an_error() {
        let text = r#"{"format_version":3,"record_id":"a","selections":{}}"#;
        let err = parse_records(text.as_bytes(), RecordFormat::JsonLines, &schema(), &ParseOptions::default());
        assert!(matches!(err, Err(NeedsLogError::Format { line: 1, found: 3, .. })));
    }

    #[test]
    fn exclusion_flags() {
        let opts = ParseOptions {
            exclusions: vec![
                Exclusion::parse_flag("low_quality=true").unwrap(),
                Exclusion::parse_flag("owns_laptop=false").unwrap(),
            ],
            ..Default::default()
        };
        let text = [
            r#"{"record_id":"a","selections":{"price":"any","screen_size":"any"},"demographics":{"low_quality":true}}"#,
            r#"{"record_id":"b","selections":{"price":"any","screen_size":"any"},"demographics":{"owns_laptop":false}}"#,
            r#"{"record_id":"c","selections":{"price":"any","screen_size":"any"},"demographics":{"owns_laptop":true}}"#,
        ]
        .join("\n");
        let out = parse_records(text.as_bytes(), RecordFormat::JsonLines, &schema(), &opts).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected[0].reason, RejectionReason::Excluded { rule: "low_quality=true".into() });
        assert_eq!(out.rejected[1].reason, RejectionReason::Excluded { rule: "owns_laptop=false".into() });
    }

    #[test]
    fn csv_import() {
        let text = "record_id,usage_tasks,domain_knowledge,facet:price,facet:screen_size,demo:owns_laptop\n\
                    r1,streaming;software_development,4,low;mid,any,yes\n\
                    r2,,,any,14.1-16,\n\
                    r3,,,any,15-17,\n";
        let out = parse_records(text.as_bytes(), RecordFormat::Csv, &schema(), &ParseOptions::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        let r1 = &out.records[0];
        assert_eq!(r1.selections["price"], Selection::values(["low", "mid"]));
        assert_eq!(r1.selections["screen_size"], Selection::Any);
        assert_eq!(r1.domain_knowledge, Some(4));
        assert!(r1.usage_tasks.contains("software_development"));
        assert_eq!(out.rejected[0].line, 4);
        assert!(matches!(out.rejected[0].reason, RejectionReason::UnknownBin { .. }));
    }

    fn with_tasks(tasks: &[&str]) -> SelectionRecord {
        let mut r = SelectionRecord::all_any("x", &schema());
        r.usage_tasks = tasks.iter().map(|s| s.to_string()).collect();
        r
    }

    #[test]
    fn cohorts() {
        let tasks = TaskList::default();
        let basic = with_tasks(&["streaming", "video_conferencing"]);
        let adv = with_tasks(&["software_development"]);
        let empty = with_tasks(&[]);
        assert!(assign_cohort(&basic, &CohortSpec::basic(), &tasks));
        assert!(!assign_cohort(&basic, &CohortSpec::advanced(), &tasks));
        assert!(assign_cohort(&adv, &CohortSpec::advanced(), &tasks));
        assert!(assign_cohort(&empty, &CohortSpec::basic(), &tasks));
        assert!(assign_cohort(&empty, &CohortSpec::all(), &tasks));

        let custom = CohortSpec {
            cohort_id: "gamers".into(),
            rule: CohortRule::Custom {
                any_of: ["casual_gaming", "high_level_gaming"].map(String::from).into(),
                all_of: BTreeSet::new(),
                none_of: ["office_work".to_string()].into(),
            },
        };
        assert!(assign_cohort(&with_tasks(&["casual_gaming"]), &custom, &tasks));
        assert!(!assign_cohort(&with_tasks(&["casual_gaming", "office_work"]), &custom, &tasks));
    }

    #[test]
    fn partition_with_only_advanced_users() {
        let pool = vec![with_tasks(&["digital_editing"]), with_tasks(&["digital_editing", "streaming"])];
        let parts = cohort_partition(&pool, &TaskList::default());
        assert!(parts["basic"].is_empty());
        assert_eq!(parts["advanced"].len(), 2);
        assert_eq!(parts["all"].len(), 2);
    }

    #[test]
    fn task_list_rejects_foreign_advanced() {
        assert!(TaskList::new(["a".to_string()].into(), ["b".to_string()].into()).is_err());
    }

    fn aggregator() -> SessionAggregator {
        SessionAggregator::new(Arc::new(schema()), TaskList::default())
    }

    fn event(facet: &str, sel: Selection, seq: u64) -> SelectionEvent {
        SelectionEvent { session_id: "s1".into(), facet_id: facet.into(), selection: sel, sequence: seq }
    }

    #[test]
    fn session_select_and_any() {
        let agg = aggregator();
        let now = Utc::now();
        assert_eq!(agg.apply(&event("screen_size", Selection::values(["14.1-16"]), 1), now), Ok(EventOutcome::Applied));
        assert_eq!(agg.pending("s1").unwrap()["screen_size"], Selection::values(["14.1-16"]));
        agg.apply(&event("price", Selection::values(["low", "mid"]), 2), now).unwrap();
        agg.apply(&event("price", Selection::Any, 3), now).unwrap();
        assert_eq!(agg.pending("s1").unwrap()["price"], Selection::Any);
    }

    #[test]
    fn session_rejects_unknown_bin_without_change() {
        let agg = aggregator();
        let now = Utc::now();
        agg.apply(&event("price", Selection::values(["low"]), 1), now).unwrap();
        let err = agg.apply(&event("price", Selection::values(["cheap"]), 2), now).unwrap_err();
        assert_eq!(err, EventError::UnknownBin { facet_id: "price".into(), bin_id: "cheap".into() });
        assert_eq!(agg.pending("s1").unwrap()["price"], Selection::values(["low"]));
        assert!(agg.apply(&event("ram", Selection::Any, 3), now).is_err());
    }

    #[test]
    fn session_event_idempotence() {
        let agg = aggregator();
        let now = Utc::now();
        let e = event("price", Selection::values(["low"]), 5);
        assert_eq!(agg.apply(&e, now), Ok(EventOutcome::Applied));
        assert_eq!(agg.apply(&e, now), Ok(EventOutcome::Duplicate));
        assert_eq!(agg.apply(&event("price", Selection::values(["high"]), 4), now), Ok(EventOutcome::Stale));
        assert_eq!(agg.pending("s1").unwrap()["price"], Selection::values(["low"]));
    }

    #[test]
    fn finalize_is_idempotent() {
        let agg = aggregator();
        let now = Utc::now();
        agg.apply(&event("price", Selection::values(["low"]), 1), now).unwrap();
        let profile = SessionProfile { usage_tasks: ["streaming".to_string()].into(), ..Default::default() };
        let (r1, fresh1) = agg.finalize("s1", &profile, now).unwrap();
        let (r2, fresh2) = agg.finalize("s1", &profile, now + Duration::seconds(5)).unwrap();
        assert!(fresh1 && !fresh2);
        assert_eq!(r1, r2);
        assert_eq!(r1.source, RecordSource::LiveEvent);
        assert!(validate_record(&r1, &schema(), &TaskList::default()).is_ok());
        assert!(matches!(
            agg.apply(&event("price", Selection::Any, 9), now),
            Err(EventError::SessionFinalized { .. })
        ));
    }

    #[test]
    fn finalize_without_events_is_all_any() {
        let agg = aggregator();
        let (r, _) = agg.finalize("fresh", &SessionProfile::default(), Utc::now()).unwrap();
        assert!(r.selections.values().all(Selection::is_any));
        assert_eq!(r.selections.len(), 2);
    }

    #[test]
    fn idle_sessions_finalize_after_timeout() {
        let agg = aggregator();
        let t0 = Utc::now();
        agg.apply(&event("price", Selection::values(["mid"]), 1), t0).unwrap();
        assert!(agg.finalize_idle(t0 + Duration::minutes(29)).is_empty());
        let done = agg.finalize_idle(t0 + Duration::minutes(30));
        assert_eq!(done.len(), 1);
        assert_eq!(agg.open_session_count(), 0);
    }
}
