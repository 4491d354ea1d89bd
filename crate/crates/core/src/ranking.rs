//! Product scoring and ordering.
//!
//! [`rank_undr`] sums `facet weight x value weight` over the facets of a
//! schema; [`rank_by_rating`] is the sort-by-average-rating baseline.
//! Both orderings are fully deterministic: ties are broken by documented
//! secondary keys and the key that decided each tie is recorded.

use std::cmp::Ordering;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{bin_attribute, CatalogError, FacetSchema, Product};
use crate::fraction::{ratio_to_string, Fraction};
use crate::weights::{Provenance, WeightTable};
use crate::FORMAT_VERSION;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("weight table does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("product `{0}` has no ratings")]
    MissingRatings(String),
    #[error("product `{product}`: {source}")]
    Attribute {
        product: String,
        #[source]
        source: CatalogError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMethod {
    Undr,
    RatingBaseline,
}

impl std::str::FromStr for RankingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "undr" => Ok(Self::Undr),
            "rating_baseline" | "rating-baseline" | "rating" => Ok(Self::RatingBaseline),
            other => Err(format!("unknown ranking method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub facet_id: String,
    /// `None` when the product's attribute fell outside every bin.
    pub bin_id: Option<String>,
    pub facet_weight: Fraction,
    pub value_weight: Fraction,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProduct {
    pub product_id: String,
    pub score: f64,
    pub exact_score: BigRational,
    /// Facets with non-zero weight on which the product found a bin.
    pub coverage: usize,
    pub breakdown: Vec<Contribution>,
}

/// The secondary key that separated an entry from its predecessor when
/// their primary scores were equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    Coverage,
    RatingCount,
    ProductId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub product_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rating: Option<f64>,
    pub rating_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_break: Option<TieBreak>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Vec<Contribution>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub format_version: u32,
    pub method: RankingMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ordering(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.product_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fails unless the table has exactly the schema's facets and bins.
pub fn check_compatible(table: &WeightTable, schema: &FacetSchema) -> Result<(), RankingError> {
    if table.facets.len() != schema.facets.len() {
        return Err(RankingError::SchemaMismatch(format!(
            "table has {} facets, schema has {}",
            table.facets.len(),
            schema.facets.len()
        )));
    }
    for facet in &schema.facets {
        let weights = table
            .facet(&facet.facet_id)
            .ok_or_else(|| RankingError::SchemaMismatch(format!("table has no facet `{}`", facet.facet_id)))?;
        let table_bins: Vec<&str> = weights.values.iter().map(|v| v.bin_id.as_str()).collect();
        let schema_bins: Vec<&str> = facet.bin_ids().collect();
        if table_bins != schema_bins {
            return Err(RankingError::SchemaMismatch(format!(
                "facet `{}` bins differ: table {:?}, schema {:?}",
                facet.facet_id, table_bins, schema_bins
            )));
        }
    }
    Ok(())
}

fn score_unchecked(product: &Product, table: &WeightTable, schema: &FacetSchema) -> Result<ScoredProduct, RankingError> {
    let mut exact = BigRational::zero();
    let mut score = 0.0;
    let mut coverage = 0;
    let mut breakdown = Vec::with_capacity(schema.facets.len());
    for facet in &schema.facets {
        let weights = table.facet(&facet.facet_id).expect("compatibility checked");
        let bin = match product.attributes.get(&facet.facet_id) {
            Some(raw) => bin_attribute(facet, raw)
                .map_err(|source| RankingError::Attribute { product: product.product_id.clone(), source })?,
            None => None,
        };
        let value_weight = bin
            .map(|b| weights.value_weight(&b.bin_id).expect("compatibility checked"))
            .unwrap_or(Fraction::ZERO);
        let facet_weight = weights.facet_weight;
        if bin.is_some() && !facet_weight.is_zero() {
            coverage += 1;
        }
        let contribution = facet_weight.to_f64() * value_weight.to_f64();
        exact += facet_weight.to_ratio() * value_weight.to_ratio();
        score += contribution;
        breakdown.push(Contribution {
            facet_id: facet.facet_id.clone(),
            bin_id: bin.map(|b| b.bin_id.clone()),
            facet_weight,
            value_weight,
            contribution,
        });
    }
    Ok(ScoredProduct { product_id: product.product_id.clone(), score, exact_score: exact, coverage, breakdown })
}

pub fn undr_score(product: &Product, table: &WeightTable, schema: &FacetSchema) -> Result<ScoredProduct, RankingError> {
    check_compatible(table, schema)?;
    score_unchecked(product, table, schema)
}

fn undr_order(a: &ScoredProduct, b: &ScoredProduct) -> Ordering {
    b.exact_score
        .cmp(&a.exact_score)
        .then_with(|| b.coverage.cmp(&a.coverage))
        .then_with(|| a.product_id.cmp(&b.product_id))
}

/// Orders by descending score, then by coverage, then by product id.
pub fn rank_undr(catalog: &[Product], table: &WeightTable, schema: &FacetSchema) -> Result<RankedList, RankingError> {
    check_compatible(table, schema)?;
    let mut scored = catalog
        .iter()
        .map(|p| score_unchecked(p, table, schema))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(undr_order);

    let by_id: std::collections::HashMap<&str, &Product> = catalog.iter().map(|p| (p.product_id.as_str(), p)).collect();
    let mut entries = Vec::with_capacity(scored.len());
    for (i, s) in scored.iter().enumerate() {
        let tie_break = (i > 0 && scored[i - 1].exact_score == s.exact_score).then(|| {
            if scored[i - 1].coverage != s.coverage {
                TieBreak::Coverage
            } else {
                TieBreak::ProductId
            }
        });
        let rating = by_id[s.product_id.as_str()].rating();
        entries.push(RankedEntry {
            rank: i + 1,
            product_id: s.product_id.clone(),
            score: s.score,
            exact_score: Some(ratio_to_string(&s.exact_score)),
            coverage: Some(s.coverage),
            mean_rating: rating.mean_rating,
            rating_count: rating.rating_count,
            tie_break,
            breakdown: Some(s.breakdown.clone()),
        });
    }
    Ok(RankedList {
        format_version: FORMAT_VERSION,
        method: RankingMethod::Undr,
        cohort_id: Some(table.cohort_id.clone()),
        provenance: Some(table.provenance.clone()),
        entries,
    })
}

// Compares mean ratings by cross-multiplication so integer star sums compare exactly.
fn compare_means(a: &Product, b: &Product) -> Ordering {
    let lhs = a.rating_sum * b.rating_count as f64;
    let rhs = b.rating_sum * a.rating_count as f64;
    lhs.total_cmp(&rhs)
}

/// Orders by descending mean rating, then by rating count, then by product id.
pub fn rank_by_rating(catalog: &[Product]) -> Result<RankedList, RankingError> {
    if let Some(p) = catalog.iter().find(|p| p.rating_count == 0) {
        return Err(RankingError::MissingRatings(p.product_id.clone()));
    }
    let mut sorted: Vec<&Product> = catalog.iter().collect();
    sorted.sort_by(|a, b| {
        compare_means(b, a)
            .then_with(|| b.rating_count.cmp(&a.rating_count))
            .then_with(|| a.product_id.cmp(&b.product_id))
    });
    let entries = sorted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let tie_break = (i > 0 && compare_means(sorted[i - 1], p) == Ordering::Equal).then(|| {
                if sorted[i - 1].rating_count != p.rating_count {
                    TieBreak::RatingCount
                } else {
                    TieBreak::ProductId
                }
            });
            let rating = p.rating();
            RankedEntry {
                rank: i + 1,
                product_id: p.product_id.clone(),
                score: rating.mean_rating.unwrap_or(0.0),
                exact_score: None,
                coverage: None,
                mean_rating: rating.mean_rating,
                rating_count: rating.rating_count,
                tie_break,
                breakdown: None,
            }
        })
        .collect();
    Ok(RankedList {
        format_version: FORMAT_VERSION,
        method: RankingMethod::RatingBaseline,
        cohort_id: None,
        provenance: None,
        entries,
    })
}

pub fn top_k(list: &RankedList, k: usize) -> RankedList {
    let mut out = list.clone();
    out.entries.truncate(k);
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::catalog::{AttributeValue, FacetDef, FacetKind, ValueBin};
    use crate::fraction::ratio_from_str;
    use crate::weights::{DenominatorMode, FacetWeights, ValueWeight};

    fn screen_schema() -> FacetSchema {
        FacetSchema::new(
            "screen",
            vec![FacetDef {
                facet_id: "screen_size".into(),
                label: "Screen size".into(),
                kind: FacetKind::NumericRange,
                values: vec![
                    ValueBin::range("lt12", "Under 12", None, Some(12.0)),
                    ValueBin::range("12-14", "12 - 14", Some(12.0), Some(14.1)),
                    ValueBin::range("14.1-16", "14.1 - 16", Some(14.1), Some(16.1)),
                    ValueBin::range("gt16", "16.1 - 20", Some(16.1), Some(20.0)),
                ],
                unit: None,
            }],
        )
        .unwrap()
    }

    fn table(facet_weight: Fraction, values: &[(&str, Fraction)]) -> WeightTable {
        WeightTable {
            format_version: FORMAT_VERSION,
            schema_id: "screen".into(),
            cohort_id: "all".into(),
            total_users: 100,
            facets: vec![FacetWeights {
                facet_id: "screen_size".into(),
                any_count: 15,
                users_specific: 85,
                facet_weight,
                values: values
                    .iter()
                    .map(|(b, w)| ValueWeight { bin_id: b.to_string(), selection_count: 0, value_weight: *w })
                    .collect(),
            }],
            provenance: Provenance {
                pool_hash: String::new(),
                table_hash: "t".into(),
                record_count: 100,
                denominator_mode: DenominatorMode::SelectionShare,
                computed_at: None,
            },
            warnings: vec![],
        }
    }

    fn paper_table() -> WeightTable {
        table(
            Fraction::new(85, 100),
            &[
                ("lt12", Fraction::new(3, 100)),
                ("12-14", Fraction::new(30, 100)),
                ("14.1-16", Fraction::new(40, 100)),
                ("gt16", Fraction::new(27, 100)),
            ],
        )
    }

    fn laptop(id: &str, screen: f64, count: u64, sum: f64) -> Product {
        Product {
            product_id: id.into(),
            title: id.into(),
            attributes: BTreeMap::from([("screen_size".into(), AttributeValue::Number(screen))]),
            rating_count: count,
            rating_sum: sum,
            price_currency: "GBP".into(),
        }
    }

    #[test]
    fn worked_example_contributions() {
        let s = undr_score(&laptop("a", 14.9, 10, 40.0), &paper_table(), &screen_schema()).unwrap();
        assert_eq!(s.exact_score, ratio_from_str("34/100").unwrap());
        assert_eq!(s.breakdown[0].bin_id.as_deref(), Some("14.1-16"));

        let s = undr_score(&laptop("b", 11.0, 10, 40.0), &paper_table(), &screen_schema()).unwrap();
        assert_eq!(s.exact_score, ratio_from_str("255/10000").unwrap());
        assert!((s.score - 0.0255).abs() < 1e-12);
    }

    #[test]
    fn no_bin_contributes_zero() {
        let s = undr_score(&laptop("big", 30.0, 10, 40.0), &paper_table(), &screen_schema()).unwrap();
        assert!(s.exact_score.is_zero());
        assert_eq!(s.breakdown[0].bin_id, None);
        assert_eq!(s.coverage, 0);
    }

    #[test]
    fn empty_schema_scores_zero() {
        let schema = FacetSchema::new("none", vec![]).unwrap();
        let mut t = paper_table();
        t.facets.clear();
        let s = undr_score(&laptop("a", 14.0, 1, 4.0), &t, &schema).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let mut t = paper_table();
        t.facets[0].values.pop();
        assert!(matches!(
            undr_score(&laptop("a", 14.0, 1, 4.0), &t, &screen_schema()),
            Err(RankingError::SchemaMismatch(_))
        ));
        let mut t = paper_table();
        t.facets[0].facet_id = "ram".into();
        assert!(matches!(rank_undr(&[], &t, &screen_schema()), Err(RankingError::SchemaMismatch(_))));
    }

    #[test]
    fn dominant_product_ranks_first() {
        let catalog = vec![laptop("small", 11.0, 10, 40.0), laptop("mid", 15.0, 10, 40.0), laptop("one", 13.0, 10, 40.0)];
        let list = rank_undr(&catalog, &paper_table(), &screen_schema()).unwrap();
        assert_eq!(list.ordering(), ["mid", "one", "small"]);
        assert_eq!(list.entries[0].rank, 1);
        assert_eq!(list.provenance.as_ref().unwrap().table_hash, "t");
    }

    #[test]
    fn undr_ties_break_on_coverage_then_id() {
        // "gt16" and NoBin both score zero once gt16 has weight zero.
        let t = table(Fraction::new(1, 2), &[("lt12", Fraction::ZERO), ("12-14", Fraction::ONE), ("14.1-16", Fraction::ZERO), ("gt16", Fraction::ZERO)]);
        let catalog = vec![laptop("z-off", 25.0, 1, 4.0), laptop("b-in", 17.0, 1, 4.0), laptop("a-in", 15.0, 1, 4.0)];
        let list = rank_undr(&catalog, &t, &screen_schema()).unwrap();
        assert_eq!(list.ordering(), ["a-in", "b-in", "z-off"]);
        assert_eq!(list.entries[1].tie_break, Some(TieBreak::ProductId));
        assert_eq!(list.entries[2].tie_break, Some(TieBreak::Coverage));
    }

    #[test]
    fn singleton_catalog() {
        let list = rank_undr(&[laptop("a", 14.0, 1, 4.0)], &paper_table(), &screen_schema()).unwrap();
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn rating_baseline_order_and_ties() {
        let catalog = vec![
            laptop("low", 14.0, 10, 45.0),
            laptop("few", 14.0, 12, 54.0),
            laptop("high", 14.0, 10, 48.0),
            laptop("many", 14.0, 200, 900.0),
        ];
        let list = rank_by_rating(&catalog).unwrap();
        assert_eq!(list.ordering(), ["high", "many", "few", "low"]);
        assert_eq!(list.entries[2].tie_break, Some(TieBreak::RatingCount));
        assert_eq!(list.entries[3].tie_break, Some(TieBreak::RatingCount));

        let mut reversed = catalog.clone();
        reversed.reverse();
        assert_eq!(rank_by_rating(&reversed).unwrap(), list);
    }

    #[test]
    fn rating_baseline_requires_ratings() {
        let err = rank_by_rating(&[laptop("cold", 14.0, 0, 0.0)]).unwrap_err();
        assert!(matches!(err, RankingError::MissingRatings(id) if id == "cold"));
    }

    #[test]
    fn top_k_bounds() {
        let catalog: Vec<_> = (0..8).map(|i| laptop(&format!("p{i}"), 10.0 + i as f64, 10, 40.0)).collect();
        let list = rank_undr(&catalog, &paper_table(), &screen_schema()).unwrap();
        assert_eq!(top_k(&list, 5).len(), 5);
        assert_eq!(top_k(&list, 0).len(), 0);
        assert_eq!(top_k(&list, 100).len(), 8);
        assert_eq!(top_k(&list, 5).ordering(), list.ordering()[..5]);
    }

    #[test]
    fn ranked_list_json_has_breakdown() {
        let list = rank_undr(&[laptop("a", 14.9, 10, 40.0)], &paper_table(), &screen_schema()).unwrap();
        let json = serde_json::to_value(&list).unwrap();
        assert_eq!(json["entries"][0]["exact_score"], "17/50");
        assert_eq!(json["entries"][0]["breakdown"][0]["bin_id"], "14.1-16");
        assert_eq!(json["method"], "undr");
        let back: RankedList = serde_json::from_value(json).unwrap();
        assert_eq!(back, list);
    }
}
