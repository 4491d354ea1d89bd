//! Slow, obviously-correct reference implementations used to check the
//! engine, plus a generator of small random ranking instances.
//!
//! The reference code never calls into the engine's algorithms; only its
//! data types are shared. [`checks`] runs both sides and compares them.

pub mod checks;

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use undr_core::catalog::{AttributeValue, FacetDef, FacetKind, FacetSchema, Product, ValueBin};
use undr_core::needslog::{CohortRule, CohortSpec, RecordSource, Selection, SelectionRecord, TaskList};
use undr_core::weights::DenominatorMode;

pub fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFacet {
    pub facet_id: String,
    pub any_count: u64,
    pub facet_weight: BigRational,
    pub value_weights: BTreeMap<String, BigRational>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub total_users: u64,
    pub facets: Vec<OracleFacet>,
}

fn in_cohort(record: &SelectionRecord, cohort: &CohortSpec, tasks: &TaskList) -> bool {
    let has = |t: &String| record.usage_tasks.contains(t);
    match &cohort.rule {
        CohortRule::All => true,
        CohortRule::Basic => !tasks.advanced.iter().any(has),
        CohortRule::Advanced => tasks.advanced.iter().any(has),
        CohortRule::Custom { any_of, all_of, none_of } => {
            (any_of.is_empty() || any_of.iter().any(has)) && all_of.iter().all(has) && !none_of.iter().any(has)
        }
    }
}

/// Facet and value weights by direct counting, one bin at a time.
pub fn weight_table(
    records: &[SelectionRecord],
    schema: &FacetSchema,
    cohort: &CohortSpec,
    tasks: &TaskList,
    mode: DenominatorMode,
) -> Option<OracleTable> {
    let members: Vec<&SelectionRecord> = records.iter().filter(|r| in_cohort(r, cohort, tasks)).collect();
    if members.is_empty() {
        return None;
    }
    let total = members.len() as u64;
    let facets = schema
        .facets
        .iter()
        .map(|facet| {
            let id = &facet.facet_id;
            let any_count = members.iter().filter(|r| r.selections[id] == Selection::Any).count() as u64;
            let users = total - any_count;
            let picks = |bin: &str| {
                members
                    .iter()
                    .filter(|r| matches!(&r.selections[id], Selection::Values(v) if v.contains(bin)))
                    .count() as u64
            };
            let all_picks: u64 = facet.values.iter().map(|b| picks(&b.bin_id)).sum();
            let denominator = match mode {
                DenominatorMode::SelectionShare => all_picks,
                DenominatorMode::UserShare => users,
            };
            let value_weights = facet
                .values
                .iter()
                .map(|b| {
                    let w = if denominator == 0 { BigRational::zero() } else { ratio(picks(&b.bin_id), denominator) };
                    (b.bin_id.clone(), w)
                })
                .collect();
            OracleFacet { facet_id: id.clone(), any_count, facet_weight: ratio(users, total), value_weights }
        })
        .collect();
    Some(OracleTable { total_users: total, facets })
}

fn normalize(text: &str) -> String {
    let mut out = String::new();
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// The bin holding `raw`, or `None`. Type mismatches also give `None`.
pub fn find_bin<'a>(facet: &'a FacetDef, raw: Option<&AttributeValue>) -> Option<&'a ValueBin> {
    let raw = raw?;
    facet.values.iter().find(|b| match (facet.kind, raw) {
        (FacetKind::NumericRange, AttributeValue::Number(v)) => {
            let above = match b.lower {
                Some(lo) => *v >= lo,
                None => true,
            };
            let below = match b.upper {
                Some(hi) => *v < hi,
                None => true,
            };
            above && below
        }
        (FacetKind::Categorical, AttributeValue::Text(s)) => b.match_values.iter().any(|m| normalize(m) == normalize(s)),
        _ => false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub product_id: String,
    pub score: BigRational,
    pub coverage: usize,
}

pub fn score(product: &Product, table: &OracleTable, schema: &FacetSchema) -> OracleScore {
    let mut total = BigRational::zero();
    let mut coverage = 0;
    for (facet, weights) in schema.facets.iter().zip(&table.facets) {
        if let Some(bin) = find_bin(facet, product.attributes.get(&facet.facet_id)) {
            total += &weights.facet_weight * &weights.value_weights[&bin.bin_id];
            if !weights.facet_weight.is_zero() {
                coverage += 1;
            }
        }
    }
    OracleScore { product_id: product.product_id.clone(), score: total, coverage }
}

/// Scores ordered by counting, for every product, how many others beat it.
pub fn rank(catalog: &[Product], table: &OracleTable, schema: &FacetSchema) -> Vec<OracleScore> {
    let scores: Vec<OracleScore> = catalog.iter().map(|p| score(p, table, schema)).collect();
    let beats = |a: &OracleScore, b: &OracleScore| {
        a.score > b.score
            || (a.score == b.score && a.coverage > b.coverage)
            || (a.score == b.score && a.coverage == b.coverage && a.product_id < b.product_id)
    };
    let mut slots: Vec<Option<OracleScore>> = vec![None; scores.len()];
    for s in &scores {
        let position = scores.iter().filter(|o| beats(o, s)).count();
        slots[position] = Some(s.clone());
    }
    slots.into_iter().map(|s| s.expect("product ids are unique")).collect()
}

/// Ids ordered by mean rating, then rating count, then id, via pairwise counting.
pub fn rank_by_rating(catalog: &[Product]) -> Vec<String> {
    let mean = |p: &Product| BigRational::new((p.rating_sum as i64).into(), (p.rating_count as i64).into());
    let beats = |a: &Product, b: &Product| {
        let (ma, mb) = (mean(a), mean(b));
        ma > mb
            || (ma == mb && a.rating_count > b.rating_count)
            || (ma == mb && a.rating_count == b.rating_count && a.product_id < b.product_id)
    };
    let mut slots = vec![String::new(); catalog.len()];
    for p in catalog {
        slots[catalog.iter().filter(|o| beats(o, p)).count()] = p.product_id.clone();
    }
    slots
}

fn choose(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// P(X ≥ k) for X ~ Binomial(n, p_num / p_den), as an exact fraction.
pub fn binomial_upper_tail(k: u64, n: u64, p_num: u64, p_den: u64) -> BigRational {
    let q_num = p_den - p_num;
    let mut numerator = BigUint::zero();
    for i in k..=n {
        numerator += choose(n, i) * BigUint::from(p_num).pow(i as u32) * BigUint::from(q_num).pow((n - i) as u32);
    }
    let denominator = BigUint::from(p_den).pow(n as u32);
    BigRational::new(numerator.into(), denominator.into())
}

/// Twice the average rank of each value, by counting smaller and equal values.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|o| *o < v).count() as u64;
            let equal = values.iter().filter(|o| *o == v).count() as u64;
            2 * less + equal + 1
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Greater,
    Less,
    TwoSided,
}

/// p-value by counting equally likely outcomes; statistics are doubled.
fn tail_share(outcomes: &[i64], observed: i64, mean2: i64, tail: Tail) -> f64 {
    let hits = outcomes
        .iter()
        .filter(|&&s| match tail {
            Tail::Greater => s >= observed,
            Tail::Less => s <= observed,
            Tail::TwoSided => (2 * s - mean2).abs() >= (2 * observed - mean2).abs(),
        })
        .count();
    (ratio(hits as u64, outcomes.len() as u64)).to_f64().expect("finite")
}

/// Wilcoxon signed-rank by enumerating all sign patterns of the non-zero
/// differences. Returns (min(W+, W-), p-value).
pub fn wilcoxon(pairs: &[(f64, f64)], tail: Tail) -> Option<(f64, f64)> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return None;
    }
    let ranks = doubled_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let total: i64 = ranks.iter().sum::<u64>() as i64;
    let observed: i64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r as i64).sum();
    let n = diffs.len();
    let outcomes: Vec<i64> = (0u32..1 << n)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i] as i64).sum())
        .collect();
    let statistic = observed.min(total - observed) as f64 / 2.0;
    Some((statistic, tail_share(&outcomes, observed, total, tail)))
}

/// Mann-Whitney U of `x` by enumerating every way to pick `x.len()` of the
/// pooled ranks. Returns (U, p-value).
pub fn mann_whitney(x: &[f64], y: &[f64], tail: Tail) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let (nx, n) = (x.len(), pooled.len());
    let shift = (nx * (nx + 1)) as i64;
    let u2 = |members: &mut dyn Iterator<Item = usize>| members.map(|i| ranks[i] as i64).sum::<i64>() - shift;
    let observed = u2(&mut (0..nx));
    let outcomes: Vec<i64> = (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == nx)
        .map(|mask| u2(&mut (0..n).filter(|i| mask & (1 << i) != 0)))
        .collect();
    let mean2 = (2 * nx * y.len()) as i64;
    (observed as f64 / 2.0, tail_share(&outcomes, observed, mean2, tail))
}

pub fn bonferroni(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| if v * p.len() as f64 > 1.0 { 1.0 } else { v * p.len() as f64 }).collect()
}

/// Kendall tau-b by checking every pair.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut only_x, mut only_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                only_x += 1;
            } else if dy == 0.0 {
                only_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let left = (concordant + discordant + only_x) as f64;
    let right = (concordant + discordant + only_y) as f64;
    if left == 0.0 || right == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (left * right).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_products: usize,
    pub max_facets: usize,
    pub max_records: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_products: 10, max_facets: 4, max_records: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub schema: FacetSchema,
    pub records: Vec<SelectionRecord>,
    pub catalog: Vec<Product>,
    pub tasks: TaskList,
    pub cohort: CohortSpec,
    pub mode: DenominatorMode,
}

fn random_facet(i: usize, rng: &mut impl Rng) -> FacetDef {
    let bins = rng.gen_range(1..=4);
    let id = format!("f{i}");
    if rng.gen_bool(0.5) {
        let mut edge = rng.gen_range(0..4) as f64;
        let mut values = Vec::new();
        for j in 0..bins {
            let next = edge + rng.gen_range(1..=3) as f64;
            let lower = if j == 0 && rng.gen_bool(0.3) { None } else { Some(edge) };
            let upper = if j == bins - 1 && rng.gen_bool(0.3) { None } else { Some(next) };
            values.push(ValueBin::range(&format!("r{j}"), &format!("range {j}"), lower, upper));
            edge = next;
        }
        FacetDef { facet_id: id.clone(), label: id, kind: FacetKind::NumericRange, values, unit: None }
    } else {
        let values = (0..bins)
            .map(|j| {
                let alias = format!("alias {j}");
                let main = format!("v{j}");
                if rng.gen_bool(0.3) {
                    ValueBin::categorical(&main, &main, [main.as_str(), alias.as_str()])
                } else {
                    ValueBin::categorical(&main, &main, [main.as_str()])
                }
            })
            .collect();
        FacetDef { facet_id: id.clone(), label: id, kind: FacetKind::Categorical, values, unit: None }
    }
}

fn random_attribute(facet: &FacetDef, rng: &mut impl Rng) -> AttributeValue {
    match facet.kind {
        FacetKind::NumericRange => AttributeValue::Number(rng.gen_range(-2..=30) as f64 / 2.0),
        FacetKind::Categorical => {
            if rng.gen_bool(0.15) {
                return AttributeValue::Text("unlisted".into());
            }
            let bin = facet.values.choose(rng).expect("facets have bins");
            let value = bin.match_values.iter().collect::<Vec<_>>().choose(rng).copied().expect("bins match a value");
            let value = if rng.gen_bool(0.3) { format!("  {}", value.to_uppercase()) } else { value.clone() };
            AttributeValue::Text(value)
        }
    }
}

/// A small random instance: schema, pool, catalog, cohort and mode.
pub fn random_instance(rng: &mut impl Rng, limits: Limits) -> Instance {
    let tasks = TaskList::default();
    let task_names: Vec<String> = tasks.tasks.iter().cloned().collect();
    let facets: Vec<FacetDef> = (0..rng.gen_range(1..=limits.max_facets)).map(|i| random_facet(i, rng)).collect();
    let schema = FacetSchema::new("random", facets).expect("generated schema is valid");

    let any_rates: Vec<f64> = schema.facets.iter().map(|_| *[0.0, 0.3, 0.7, 1.0].choose(rng).unwrap()).collect();
    let records = (0..rng.gen_range(1..=limits.max_records))
        .map(|i| {
            let selections = schema
                .facets
                .iter()
                .zip(&any_rates)
                .map(|(facet, &rate)| {
                    let selection = if rng.gen_bool(rate) {
                        Selection::Any
                    } else {
                        let mut bins: BTreeSet<String> =
                            facet.values.iter().filter(|_| rng.gen_bool(0.3)).map(|b| b.bin_id.clone()).collect();
                        if bins.is_empty() {
                            bins.insert(facet.values.choose(rng).unwrap().bin_id.clone());
                        }
                        Selection::Values(bins)
                    };
                    (facet.facet_id.clone(), selection)
                })
                .collect();
            SelectionRecord {
                record_id: format!("r{i}"),
                selections,
                usage_tasks: task_names.iter().filter(|_| rng.gen_bool(0.15)).cloned().collect(),
                domain_knowledge: None,
                demographics: None,
                source: RecordSource::Survey,
                timestamp: Default::default(),
            }
        })
        .collect();

    let mut ids: Vec<usize> = (0..rng.gen_range(0..=limits.max_products)).collect();
    ids.shuffle(rng);
    let mut catalog: Vec<Product> = Vec::new();
    for id in ids {
        let attributes = if !catalog.is_empty() && rng.gen_bool(0.2) {
            catalog.choose(rng).unwrap().attributes.clone()
        } else {
            let mut attributes = BTreeMap::new();
            for f in &schema.facets {
                if rng.gen_bool(0.9) {
                    attributes.insert(f.facet_id.clone(), random_attribute(f, rng));
                }
            }
            attributes
        };
        let rating_count = rng.gen_range(1..=20u64);
        let rating_sum = (rating_count * rng.gen_range(1..=5u64)) as f64;
        catalog.push(Product {
            product_id: format!("p{id:02}"),
            title: format!("product {id}"),
            attributes,
            rating_count,
            rating_sum,
            price_currency: String::new(),
        });
    }

    let cohort = match rng.gen_range(0..4) {
        0 => CohortSpec::basic(),
        1 => CohortSpec::advanced(),
        _ => CohortSpec::all(),
    };
    let mode = if rng.gen_bool(0.5) { DenominatorMode::SelectionShare } else { DenominatorMode::UserShare };
    Instance { schema, records, catalog, tasks, cohort, mode }
}
