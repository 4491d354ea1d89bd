//! Core of the user-needs-driven ranking engine.
//!
//! Products are scored by how well their attributes match what shoppers
//! actually ask for: every facet carries a popularity weight (the share of
//! shoppers who constrained it) and every facet value carries a value weight
//! (how popular that value is among the shoppers who used the facet). A
//! product's score is the sum over facets of the two weights multiplied
//! together. No ratings, reviews or clicks are needed, so new products rank
//! on equal footing.

pub mod catalog;
pub mod fraction;
pub mod harness;
pub mod needslog;
pub mod presets;
pub mod ranking;
pub mod stats;
pub mod weights;

pub use catalog::{AttributeValue, FacetDef, FacetKind, FacetSchema, Product, RatingSummary, ValueBin};
pub use fraction::Fraction;
pub use needslog::{CohortRule, CohortSpec, Selection, SelectionRecord, TaskList};
pub use ranking::{RankedList, RankingMethod, ScoredProduct};
pub use weights::{DenominatorMode, WeightTable};

/// Version stamped into every file format and API payload.
pub const FORMAT_VERSION: u32 = 1;
