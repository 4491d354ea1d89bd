//! Facet and value popularity weights.
//!
//! The facet weight is the share of users who picked something other than
//! "any" for the facet. The value weight is the popularity of a bin among
//! those users, under one of two denominators (see [`DenominatorMode`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{FacetDef, FacetSchema};
use crate::fraction::Fraction;
use crate::needslog::{assign_cohort, CohortSpec, Selection, SelectionRecord, TaskList};
use crate::FORMAT_VERSION;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("record pool is empty")]
    EmptyPool,
    #[error("cohort `{0}` has no records")]
    EmptyCohort(String),
    #[error("record `{record_id}` has no selection for facet `{facet_id}`")]
    MissingFacet { record_id: String, facet_id: String },
    #[error("record `{record_id}` selects unknown bin `{bin_id}` in facet `{facet_id}`")]
    UnknownBin { record_id: String, facet_id: String, bin_id: String },
    #[error("unsupported format_version {found} (expected {expected})")]
    Format { found: u32, expected: u32 },
    #[error("invalid weight table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Bin selections over all bin selections in the facet; sums to one.
    #[default]
    SelectionShare,
    /// Users selecting the bin over users who used the facet.
    UserShare,
}

impl std::str::FromStr for DenominatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "selection_share" | "selection-share" => Ok(Self::SelectionShare),
            "user_share" | "user-share" => Ok(Self::UserShare),
            other => Err(format!("unknown denominator mode `{other}`")),
        }
    }
}

pub const DEFAULT_MIN_POOL: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub mode: DenominatorMode,
    /// Pools smaller than this build anyway but log a warning.
    pub min_pool: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { mode: DenominatorMode::default(), min_pool: DEFAULT_MIN_POOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueWeight {
    pub bin_id: String,
    pub selection_count: u64,
    pub value_weight: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetWeights {
    pub facet_id: String,
    pub any_count: u64,
    pub users_specific: u64,
    pub facet_weight: Fraction,
    pub values: Vec<ValueWeight>,
}

impl FacetWeights {
    pub fn value_weight(&self, bin_id: &str) -> Option<Fraction> {
        self.values.iter().find(|v| v.bin_id == bin_id).map(|v| v.value_weight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 over the cohort's records in pool order.
    pub pool_hash: String,
    /// SHA-256 binding schema, cohort, mode, pool and weights.
    pub table_hash: String,
    pub record_count: u64,
    pub denominator_mode: DenominatorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub computed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub format_version: u32,
    pub schema_id: String,
    pub cohort_id: String,
    pub total_users: u64,
    pub facets: Vec<FacetWeights>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl WeightTable {
    pub fn facet(&self, facet_id: &str) -> Option<&FacetWeights> {
        self.facets.iter().find(|f| f.facet_id == facet_id)
    }

    pub fn hash(&self) -> &str {
        &self.provenance.table_hash
    }

    pub fn with_timestamp(mut self, at: DateTime<Utc>) -> Self {
        self.provenance.computed_at = Some(at);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WeightsError> {
        let table: WeightTable = serde_json::from_str(text).map_err(|e| WeightsError::Parse(e.to_string()))?;
        if table.format_version != FORMAT_VERSION {
            return Err(WeightsError::Format { found: table.format_version, expected: FORMAT_VERSION });
        }
        Ok(table)
    }

    /// Attribute / "any" count / overall weight, one row per facet.
    pub fn render(&self, schema: &FacetSchema) -> String {
        let mut out = String::new();
        let label = |id: &str| schema.facet(id).map_or(id.to_owned(), |f| f.label.clone());
        let width = self.facets.iter().map(|f| label(&f.facet_id).len()).max().unwrap_or(9).max(9);
        let _ = writeln!(out, "cohort `{}` ({} users, {:?})", self.cohort_id, self.total_users, self.provenance.denominator_mode);
        let _ = writeln!(out, "{:<width$}  {:>11}  {:>7}", "attribute", "\"any\" count", "overall");
        for f in &self.facets {
            let _ = writeln!(out, "{:<width$}  {:>11}  {:>7.2}", label(&f.facet_id), f.any_count, f.facet_weight.to_f64());
        }
        out
    }

    fn compute_hash(&mut self) {
        let mut hasher = Sha256::new();
        hasher.update(self.schema_id.as_bytes());
        hasher.update([0]);
        hasher.update(self.cohort_id.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(&self.provenance.denominator_mode).expect("mode serializes"));
        hasher.update(self.provenance.pool_hash.as_bytes());
        hasher.update(serde_json::to_vec(&self.facets).expect("facets serialize"));
        self.provenance.table_hash = hex::encode(hasher.finalize());
    }
}

fn selection_for<'r>(record: &'r SelectionRecord, facet_id: &str) -> Result<&'r Selection, WeightsError> {
    record.selection(facet_id).ok_or_else(|| WeightsError::MissingFacet {
        record_id: record.record_id.clone(),
        facet_id: facet_id.to_owned(),
    })
}

/// Share of records that did not answer "any" for the facet.
pub fn compute_facet_weight(records: &[SelectionRecord], facet_id: &str) -> Result<Fraction, WeightsError> {
    if records.is_empty() {
        return Err(WeightsError::EmptyPool);
    }
    let mut used = 0u64;
    for r in records {
        if !selection_for(r, facet_id)?.is_any() {
            used += 1;
        }
    }
    Ok(Fraction::new(used, records.len() as u64))
}

struct FacetCounts {
    any_count: u64,
    users_specific: u64,
    total_selections: u64,
    per_bin: Vec<u64>,
}

fn count_facet(records: &[&SelectionRecord], facet: &FacetDef) -> Result<FacetCounts, WeightsError> {
    let mut counts = FacetCounts { any_count: 0, users_specific: 0, total_selections: 0, per_bin: vec![0; facet.values.len()] };
    let index: BTreeMap<&str, usize> = facet.bin_ids().enumerate().map(|(i, b)| (b, i)).collect();
    for r in records {
        match selection_for(r, &facet.facet_id)? {
            Selection::Any => counts.any_count += 1,
            Selection::Values(bins) => {
                counts.users_specific += 1;
                for bin in bins {
                    let i = *index.get(bin.as_str()).ok_or_else(|| WeightsError::UnknownBin {
                        record_id: r.record_id.clone(),
                        facet_id: facet.facet_id.clone(),
                        bin_id: bin.clone(),
                    })?;
                    counts.per_bin[i] += 1;
                    counts.total_selections += 1;
                }
            }
        }
    }
    Ok(counts)
}

fn value_weights_from(counts: &FacetCounts, facet: &FacetDef, mode: DenominatorMode) -> Vec<ValueWeight> {
    let denominator = match mode {
        DenominatorMode::SelectionShare => counts.total_selections,
        DenominatorMode::UserShare => counts.users_specific,
    };
    facet
        .values
        .iter()
        .zip(&counts.per_bin)
        .map(|(bin, &n)| ValueWeight { bin_id: bin.bin_id.clone(), selection_count: n, value_weight: Fraction::new(n, denominator) })
        .collect()
}

/// Value weight of every bin in `facet`. All zero when nobody used the facet.
pub fn compute_value_weights(
    records: &[SelectionRecord],
    facet: &FacetDef,
    mode: DenominatorMode,
) -> Result<BTreeMap<String, Fraction>, WeightsError> {
    let refs: Vec<&SelectionRecord> = records.iter().collect();
    let counts = count_facet(&refs, facet)?;
    Ok(value_weights_from(&counts, facet, mode).into_iter().map(|v| (v.bin_id, v.value_weight)).collect())
}

/// SHA-256 over the records in order, one canonical JSON document per record.
pub fn pool_hash<'a>(records: impl IntoIterator<Item = &'a SelectionRecord>) -> String {
    let mut hasher = Sha256::new();
    for r in records {
        hasher.update(serde_json::to_vec(r).expect("record serializes"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Builds the weight table for the records that fall into `cohort`.
pub fn build_weight_table(
    records: &[SelectionRecord],
    schema: &FacetSchema,
    cohort: &CohortSpec,
    tasks: &TaskList,
    options: &BuildOptions,
) -> Result<WeightTable, WeightsError> {
    if records.is_empty() {
        return Err(WeightsError::EmptyPool);
    }
    let members: Vec<&SelectionRecord> = records.iter().filter(|r| assign_cohort(r, cohort, tasks)).collect();
    if members.is_empty() {
        return Err(WeightsError::EmptyCohort(cohort.cohort_id.clone()));
    }
    let total = members.len() as u64;
    let mut facets = Vec::with_capacity(schema.facets.len());
    for facet in &schema.facets {
        let counts = count_facet(&members, facet)?;
        facets.push(FacetWeights {
            facet_id: facet.facet_id.clone(),
            any_count: counts.any_count,
            users_specific: counts.users_specific,
            facet_weight: Fraction::new(counts.users_specific, total),
            values: value_weights_from(&counts, facet, options.mode),
        });
    }
    let mut warnings = Vec::new();
    if members.len() < options.min_pool {
        let msg = format!(
            "cohort `{}` has {} records, below the recommended minimum of {}",
            cohort.cohort_id,
            members.len(),
            options.min_pool
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut table = WeightTable {
        format_version: FORMAT_VERSION,
        schema_id: schema.schema_id.clone(),
        cohort_id: cohort.cohort_id.clone(),
        total_users: total,
        facets,
        provenance: Provenance {
            pool_hash: pool_hash(members.iter().copied()),
            table_hash: String::new(),
            record_count: total,
            denominator_mode: options.mode,
            computed_at: None,
        },
        warnings,
    };
    table.compute_hash();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{FacetKind, ValueBin};

    fn facet(id: &str, bins: &[&str]) -> FacetDef {
        FacetDef {
            facet_id: id.into(),
            label: id.into(),
            kind: FacetKind::Categorical,
            values: bins.iter().map(|b| ValueBin::categorical(b, b, [*b])).collect(),
            unit: None,
        }
    }

    fn record(id: &str, sels: &[(&str, Option<&[&str]>)]) -> SelectionRecord {
        SelectionRecord {
            record_id: id.into(),
            selections: sels
                .iter()
                .map(|(f, s)| (f.to_string(), s.map_or(Selection::Any, |b| Selection::values(b.iter().copied()))))
                .collect(),
            ..SelectionRecord::all_any(id, &FacetSchema::new("e", vec![]).unwrap())
        }
    }

    fn pool_with_any(total: usize, any: usize) -> Vec<SelectionRecord> {
        (0..total)
            .map(|i| {
                let sel: Option<&[&str]> = if i < any { None } else { Some(&["a"]) };
                record(&format!("r{i}"), &[("f", sel)])
            })
            .collect()
    }

    #[test]
    fn facet_weight_from_any_counts() {
        let w = compute_facet_weight(&pool_with_any(277, 24), "f").unwrap();
        assert_eq!(w, Fraction::new(253, 277));
        assert_eq!(w.rounded(2), 0.91);
        let w = compute_facet_weight(&pool_with_any(277, 141), "f").unwrap();
        assert_eq!(w.rounded(2), 0.49);
        assert_eq!(compute_facet_weight(&pool_with_any(5, 5), "f").unwrap(), Fraction::ZERO);
        assert_eq!(compute_facet_weight(&[], "f"), Err(WeightsError::EmptyPool));
    }

    #[test]
    fn single_select_modes_agree() {
        let f = facet("f", &["A", "B"]);
        let mut pool: Vec<_> = (0..6).map(|i| record(&format!("a{i}"), &[("f", Some(&["A"]))])).collect();
        pool.extend((0..4).map(|i| record(&format!("b{i}"), &[("f", Some(&["B"]))])));
        for mode in [DenominatorMode::SelectionShare, DenominatorMode::UserShare] {
            let w = compute_value_weights(&pool, &f, mode).unwrap();
            assert_eq!(w["A"], Fraction::new(6, 10));
            assert_eq!(w["B"], Fraction::new(4, 10));
        }
    }

    #[test]
    fn multi_select_modes_differ() {
        let f = facet("f", &["A", "B"]);
        let pool = vec![record("1", &[("f", Some(&["A", "B"]))]), record("2", &[("f", Some(&["A"]))])];
        let share = compute_value_weights(&pool, &f, DenominatorMode::SelectionShare).unwrap();
        assert_eq!(share["A"], Fraction::new(2, 3));
        let users = compute_value_weights(&pool, &f, DenominatorMode::UserShare).unwrap();
        assert_eq!(users["A"], Fraction::ONE);
        assert_eq!(users["B"], Fraction::new(1, 2));
    }

    #[test]
    fn screen_size_share_of_selections() {
        // 236 facet users, 383 selections in total, 153 of them for 14.1-16
        let f = facet("screen_size", &["lt12", "12-14", "14.1-16", "gt16"]);
        let counts = [("lt12", 12), ("12-14", 120), ("14.1-16", 153), ("gt16", 98)];
        let users = 236;
        let mut sets: Vec<Vec<&str>> = vec![Vec::new(); users];
        let mut j = 0;
        for (bin, c) in counts {
            for _ in 0..c {
                sets[j % users].push(bin);
                j += 1;
            }
        }
        let pool: Vec<_> = sets.iter().enumerate().map(|(i, s)| record(&i.to_string(), &[("screen_size", Some(s))])).collect();
        let w = compute_value_weights(&pool, &f, DenominatorMode::SelectionShare).unwrap();
        assert_eq!(w["14.1-16"], Fraction::new(153, 383));
        assert_eq!(w["14.1-16"].rounded(2), 0.40);
        assert_eq!(w["lt12"].rounded(2), 0.03);
        let users_mode = compute_value_weights(&pool, &f, DenominatorMode::UserShare).unwrap();
        assert_eq!(users_mode["14.1-16"], Fraction::new(153, 236));
    }

    #[test]
    fn unused_facet_has_zero_value_weights() {
        let f = facet("f", &["A", "B"]);
        let w = compute_value_weights(&pool_with_any(3, 3), &f, DenominatorMode::SelectionShare).unwrap();
        assert!(w.values().all(Fraction::is_zero));
    }

    #[test]
    fn unknown_bin_is_reported() {
        let f = facet("f", &["A"]);
        let pool = vec![record("1", &[("f", Some(&["Z"]))])];
        assert!(matches!(
            compute_value_weights(&pool, &f, DenominatorMode::SelectionShare),
            Err(WeightsError::UnknownBin { .. })
        ));
    }

    #[test]
    fn singleton_table() {
        let schema = FacetSchema::new("s", vec![facet("f", &["A", "B"])]).unwrap();
        let pool = vec![record("1", &[("f", Some(&["A"]))])];
        let t = build_weight_table(&pool, &schema, &CohortSpec::all(), &TaskList::default(), &BuildOptions::default()).unwrap();
        assert_eq!(t.facets[0].facet_weight, Fraction::ONE);
        assert_eq!(t.facets[0].value_weight("A"), Some(Fraction::ONE));
        assert_eq!(t.facets[0].value_weight("B"), Some(Fraction::ZERO));
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn empty_cohort_is_an_error() {
        let schema = FacetSchema::new("s", vec![facet("f", &["A"])]).unwrap();
        let pool = vec![record("1", &[("f", None)])];
        let err = build_weight_table(&pool, &schema, &CohortSpec::advanced(), &TaskList::default(), &BuildOptions::default());
        assert_eq!(err.unwrap_err(), WeightsError::EmptyCohort("advanced".into()));
    }

    #[test]
    fn table_json_roundtrip_and_hash_stability() {
        let schema = FacetSchema::new("s", vec![facet("f", &["a", "b"])]).unwrap();
        let pool = pool_with_any(40, 10);
        let opts = BuildOptions::default();
        let t1 = build_weight_table(&pool, &schema, &CohortSpec::all(), &TaskList::default(), &opts).unwrap();
        let t2 = build_weight_table(&pool, &schema, &CohortSpec::all(), &TaskList::default(), &opts).unwrap();
        assert_eq!(t1.hash(), t2.hash());
        let back = WeightTable::from_json(&t1.to_json()).unwrap();
        assert_eq!(back, t1);

        let user = BuildOptions { mode: DenominatorMode::UserShare, ..opts };
        let t3 = build_weight_table(&pool, &schema, &CohortSpec::all(), &TaskList::default(), &user).unwrap();
        assert_ne!(t1.hash(), t3.hash());
        assert!(t1.render(&schema).contains("f                   10     0.75"));
    }
}
