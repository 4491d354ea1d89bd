//! Facet schema, product model and catalog filtering.
//!
//! A [`FacetSchema`] lists the facets shoppers can filter on. Each facet is
//! split into [`ValueBin`]s: numeric ranges (lower-inclusive,
//! upper-exclusive) or sets of categorical strings. Products carry raw
//! attribute values which are mapped onto bins with [`bin_attribute`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FORMAT_VERSION;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("facet `{facet}` expects a {expected} value, got {got}")]
    InvalidAttribute { facet: String, expected: &'static str, got: String },
    #[error("invalid product `{product}`: {reason}")]
    InvalidProduct { product: String, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format_version {found} (expected {expected})")]
    Format { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKind {
    Categorical,
    NumericRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBin {
    pub bin_id: String,
    pub label: String,
    /// Inclusive lower bound; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    /// Exclusive upper bound; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub match_values: BTreeSet<String>,
}

impl ValueBin {
    pub fn range(bin_id: &str, label: &str, lower: Option<f64>, upper: Option<f64>) -> Self {
        Self {
            bin_id: bin_id.to_owned(),
            label: label.to_owned(),
            lower,
            upper,
            match_values: BTreeSet::new(),
        }
    }

    pub fn categorical<'a>(bin_id: &str, label: &str, values: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            bin_id: bin_id.to_owned(),
            label: label.to_owned(),
            lower: None,
            upper: None,
            match_values: values.into_iter().map(canonicalize).collect(),
        }
    }

    fn contains(&self, value: f64) -> bool {
        self.lower.map_or(true, |lo| value >= lo) && self.upper.map_or(true, |hi| value < hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetDef {
    pub facet_id: String,
    pub label: String,
    pub kind: FacetKind,
    pub values: Vec<ValueBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl FacetDef {
    pub fn bin(&self, bin_id: &str) -> Option<&ValueBin> {
        self.values.iter().find(|b| b.bin_id == bin_id)
    }

    pub fn has_bin(&self, bin_id: &str) -> bool {
        self.bin(bin_id).is_some()
    }

    pub fn bin_ids(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(|b| b.bin_id.as_str())
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let bad = |msg: String| Err(CatalogError::InvalidSchema(format!("facet `{}`: {msg}", self.facet_id)));
        if self.values.is_empty() {
            return bad("has no bins".into());
        }
        let mut ids = HashSet::new();
        for bin in &self.values {
            if !ids.insert(bin.bin_id.as_str()) {
                return bad(format!("duplicate bin id `{}`", bin.bin_id));
            }
        }
        match self.kind {
            FacetKind::NumericRange => {
                let last = self.values.len() - 1;
                for (i, bin) in self.values.iter().enumerate() {
                    if bin.lower.is_some_and(f64::is_nan) || bin.upper.is_some_and(f64::is_nan) {
                        return bad(format!("bin `{}` has a NaN bound", bin.bin_id));
                    }
                    if let (Some(lo), Some(hi)) = (bin.lower, bin.upper) {
                        if lo >= hi {
                            return bad(format!("bin `{}` has lower >= upper", bin.bin_id));
                        }
                    }
                    if bin.lower.is_none() && i != 0 {
                        return bad(format!("only the first bin may be open below (`{}`)", bin.bin_id));
                    }
                    if bin.upper.is_none() && i != last {
                        return bad(format!("only the last bin may be open above (`{}`)", bin.bin_id));
                    }
                    if i > 0 {
                        let prev_upper = self.values[i - 1].upper.expect("checked above");
                        let lower = bin.lower.expect("checked above");
                        if lower < prev_upper {
                            return bad(format!("bins `{}` and `{}` overlap or are unsorted", self.values[i - 1].bin_id, bin.bin_id));
                        }
                    }
                }
            }
            FacetKind::Categorical => {
                let mut seen = HashSet::new();
                for bin in &self.values {
                    if bin.match_values.is_empty() {
                        return bad(format!("categorical bin `{}` has no match values", bin.bin_id));
                    }
                    for value in &bin.match_values {
                        if !seen.insert(canonicalize(value)) {
                            return bad(format!("match value `{value}` appears in more than one bin"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetSchema {
    pub format_version: u32,
    pub schema_id: String,
    pub facets: Vec<FacetDef>,
}

impl FacetSchema {
    pub fn new(schema_id: impl Into<String>, facets: Vec<FacetDef>) -> Result<Self, CatalogError> {
        let schema = Self { format_version: FORMAT_VERSION, schema_id: schema_id.into(), facets };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CatalogError::Format { found: self.format_version, expected: FORMAT_VERSION });
        }
        let mut ids = HashSet::new();
        for facet in &self.facets {
            if !ids.insert(facet.facet_id.as_str()) {
                return Err(CatalogError::InvalidSchema(format!("duplicate facet id `{}`", facet.facet_id)));
            }
            facet.validate()?;
        }
        Ok(())
    }

    pub fn facet(&self, facet_id: &str) -> Option<&FacetDef> {
        self.facets.iter().find(|f| f.facet_id == facet_id)
    }

    pub fn facet_ids(&self) -> impl Iterator<Item = &str> {
        self.facets.iter().map(|f| f.facet_id.as_str())
    }

    /// Reads and validates a schema JSON document.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let schema: FacetSchema =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse { line: e.line(), message: e.to_string() })?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Raw attribute as it appears in a catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Number(f64),
    Text(String),
}

impl AttributeValue {
    fn describe(&self) -> String {
        match self {
            AttributeValue::Number(n) => format!("number {n}"),
            AttributeValue::Text(s) => format!("text {s:?}"),
        }
    }
}

impl From<f64> for AttributeValue {
    fn from(v: f64) -> Self {
        AttributeValue::Number(v)
    }
}

impl From<&str> for AttributeValue {
    fn from(v: &str) -> Self {
        AttributeValue::Text(v.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    pub title: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    pub rating_count: u64,
    pub rating_sum: f64,
    #[serde(default)]
    pub price_currency: String,
}

impl Product {
    /// Checks the rating invariants: star values lie in 1..=5.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let fail = |reason: String| Err(CatalogError::InvalidProduct { product: self.product_id.clone(), reason });
        if self.product_id.trim().is_empty() {
            return fail("empty product_id".into());
        }
        if !self.rating_sum.is_finite() || self.rating_sum < 0.0 {
            return fail(format!("rating_sum {} is not a non-negative number", self.rating_sum));
        }
        let count = self.rating_count as f64;
        if self.rating_sum > 5.0 * count {
            return fail(format!("rating_sum {} exceeds 5 x rating_count {}", self.rating_sum, self.rating_count));
        }
        if self.rating_count > 0 && self.rating_sum < count {
            return fail(format!("rating_sum {} implies a mean below one star", self.rating_sum));
        }
        Ok(())
    }

    pub fn rating(&self) -> RatingSummary {
        mean_rating(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub mean_rating: Option<f64>,
    pub rating_count: u64,
}

pub fn mean_rating(product: &Product) -> RatingSummary {
    let mean_rating = (product.rating_count > 0).then(|| product.rating_sum / product.rating_count as f64);
    RatingSummary { mean_rating, rating_count: product.rating_count }
}

/// Trims, case-folds and collapses internal whitespace.
pub fn canonicalize(raw: &str) -> String {
    raw.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Maps a raw attribute onto the facet's bin. `Ok(None)` means no bin matched.
pub fn bin_attribute<'f>(facet: &'f FacetDef, raw: &AttributeValue) -> Result<Option<&'f ValueBin>, CatalogError> {
    match (facet.kind, raw) {
        (FacetKind::NumericRange, AttributeValue::Number(v)) => {
            if v.is_nan() {
                return Err(CatalogError::InvalidAttribute {
                    facet: facet.facet_id.clone(),
                    expected: "numeric",
                    got: raw.describe(),
                });
            }
            Ok(facet.values.iter().find(|b| b.contains(*v)))
        }
        (FacetKind::Categorical, AttributeValue::Text(s)) => {
            let key = canonicalize(s);
            Ok(facet.values.iter().find(|b| b.match_values.iter().any(|m| canonicalize(m) == key)))
        }
        (FacetKind::NumericRange, other) => Err(CatalogError::InvalidAttribute {
            facet: facet.facet_id.clone(),
            expected: "numeric",
            got: other.describe(),
        }),
        (FacetKind::Categorical, other) => Err(CatalogError::InvalidAttribute {
            facet: facet.facet_id.clone(),
            expected: "text",
            got: other.describe(),
        }),
    }
}

/// Keeps products that have every schema facet, enough ratings, and are not
/// duplicates of an earlier (title, attributes) pair. Order is preserved.
pub fn filter_catalog(products: &[Product], schema: &FacetSchema, min_ratings: u64) -> Vec<Product> {
    let mut seen = HashSet::new();
    products
        .iter()
        .filter(|p| schema.facet_ids().all(|f| p.attributes.contains_key(f)))
        .filter(|p| p.rating_count >= min_ratings)
        .filter(|p| seen.insert(dedup_key(p)))
        .cloned()
        .collect()
}

fn dedup_key(product: &Product) -> (String, String) {
    let attrs = serde_json::to_string(&product.attributes).expect("attribute map serializes");
    (product.title.clone(), attrs)
}

/// Optional version marker on each catalog line.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u32>,
}

/// Parses a JSON Lines catalog. Blank lines are skipped; every product is
/// validated and product ids must be unique.
pub fn read_catalog(reader: impl BufRead) -> Result<Vec<Product>, CatalogError> {
    let mut products = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| CatalogError::Parse { line: line_no, message: e.to_string() };
        let probe: VersionProbe = serde_json::from_str(&line).map_err(parse_err)?;
        if let Some(found) = probe.format_version {
            if found != FORMAT_VERSION {
                return Err(CatalogError::Format { found, expected: FORMAT_VERSION });
            }
        }
        let product: Product = serde_json::from_str(&line).map_err(parse_err)?;
        product
            .validate()
            .map_err(|e| CatalogError::Parse { line: line_no, message: e.to_string() })?;
        if !ids.insert(product.product_id.clone()) {
            return Err(CatalogError::Parse {
                line: line_no,
                message: format!("duplicate product_id `{}`", product.product_id),
            });
        }
        products.push(product);
    }
    Ok(products)
}

#[derive(Serialize)]
struct VersionedProduct<'a> {
    format_version: u32,
    #[serde(flatten)]
    product: &'a Product,
}

/// Writes products as JSON Lines, each tagged with `format_version`.
pub fn write_catalog(mut out: impl std::io::Write, products: &[Product]) -> std::io::Result<()> {
    for product in products {
        serde_json::to_writer(&mut out, &VersionedProduct { format_version: FORMAT_VERSION, product })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Multiplies the numeric attribute `facet_id` by `factor` and relabels the
/// currency. Used when a catalog is ingested in a different currency.
pub fn convert_price(products: &mut [Product], facet_id: &str, factor: f64, currency: &str) {
    for p in products {
        if let Some(AttributeValue::Number(v)) = p.attributes.get_mut(facet_id) {
            *v = (*v * factor * 100.0).round() / 100.0;
        }
        p.price_currency = currency.to_owned();
    }
}
