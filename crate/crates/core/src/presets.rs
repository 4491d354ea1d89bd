//! The laptop-shop setup: ten facets, the published "any" counts from the
//! 277-participant needs survey, and a task-flag profile for the basic /
//! advanced cohort split.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{FacetDef, FacetKind, FacetSchema, ValueBin};
use crate::harness::{draw_bin_counts, FacetPoolSpec, SyntheticPoolSpec, TaskFlagSpec, ValueDraw};

pub const SURVEY_USERS: u64 = 277;
pub const BASIC_USERS: u64 = 83;
pub const ADVANCED_USERS: u64 = 194;
pub const CATALOG_SIZE: usize = 182;

/// Published facet popularity: (facet id, "any" count out of 277, weight).
pub const TABLE1: [(&str, u64, f64); 10] = [
    ("price", 24, 0.91),
    ("brand", 77, 0.72),
    ("operating_system", 35, 0.87),
    ("screen_size", 41, 0.85),
    ("hard_drive_size", 55, 0.80),
    ("ram_size", 33, 0.88),
    ("cpu_cores", 126, 0.55),
    ("cpu_speed", 90, 0.68),
    ("cpu_brand", 141, 0.49),
    ("battery_life", 38, 0.86),
];

/// Screen-size selection counts over the 236 users who used the facet:
/// 153 picks of 14.1-16 make up 40% of all 383 picks, and under-12 gets 3%.
pub const SCREEN_SIZE_COUNTS: [(&str, u64); 4] = [("lt12", 12), ("12-14", 120), ("14.1-16", 153), ("gt16", 98)];

/// Per-task user counts, read approximately off a bar chart of the survey's
/// usage habits. Only the 83 / 194 basic / advanced split is exact.
pub const TASK_COUNTS_APPROX: [(&str, u64); 10] = [
    ("basic_tasks", 245),
    ("office_work", 170),
    ("studying", 80),
    ("streaming", 225),
    ("video_conferencing", 190),
    ("social_media", 150),
    ("casual_gaming", 85),
    ("digital_editing", 95),
    ("software_development", 60),
    ("high_level_gaming", 75),
];

fn numeric(id: &str, label: &str, unit: &str, bins: &[(&str, &str, Option<f64>, Option<f64>)]) -> FacetDef {
    FacetDef {
        facet_id: id.into(),
        label: label.into(),
        kind: FacetKind::NumericRange,
        values: bins.iter().map(|(b, l, lo, hi)| ValueBin::range(b, l, *lo, *hi)).collect(),
        unit: Some(unit.into()),
    }
}

fn categorical(id: &str, label: &str, bins: &[(&str, &str, &[&str])]) -> FacetDef {
    FacetDef {
        facet_id: id.into(),
        label: label.into(),
        kind: FacetKind::Categorical,
        values: bins.iter().map(|(b, l, m)| ValueBin::categorical(b, l, m.iter().copied())).collect(),
        unit: None,
    }
}

pub fn laptop_schema() -> FacetSchema {
    let facets = vec![
        numeric(
            "price",
            "Price",
            "GBP",
            &[
                ("lt300", "Under £300", None, Some(300.0)),
                ("300-500", "£300 - £500", Some(300.0), Some(500.0)),
                ("500-700", "£500 - £700", Some(500.0), Some(700.0)),
                ("700-1000", "£700 - £1000", Some(700.0), Some(1000.0)),
                ("1000-1500", "£1000 - £1500", Some(1000.0), Some(1500.0)),
                ("gte1500", "£1500 and above", Some(1500.0), None),
            ],
        ),
        categorical(
            "brand",
            "Brand",
            &[
                ("acer", "Acer", &["acer"]),
                ("apple", "Apple", &["apple"]),
                ("asus", "ASUS", &["asus"]),
                ("dell", "Dell", &["dell"]),
                ("hp", "HP", &["hp", "hewlett packard"]),
                ("lenovo", "Lenovo", &["lenovo"]),
                ("microsoft", "Microsoft", &["microsoft"]),
                ("msi", "MSI", &["msi"]),
            ],
        ),
        categorical(
            "operating_system",
            "Operating system",
            &[
                ("windows", "Windows", &["windows", "windows 10", "windows 11"]),
                ("macos", "macOS", &["macos", "mac os"]),
                ("chrome_os", "Chrome OS", &["chrome os", "chromeos"]),
                ("linux", "Linux", &["linux", "ubuntu"]),
            ],
        ),
        numeric(
            "screen_size",
            "Screen size",
            "inches",
            &[
                ("lt12", "Under 12", None, Some(12.0)),
                ("12-14", "12 - 14", Some(12.0), Some(14.1)),
                ("14.1-16", "14.1 - 16", Some(14.1), Some(16.1)),
                ("gt16", "Over 16", Some(16.1), None),
            ],
        ),
        numeric(
            "hard_drive_size",
            "Hard drive size",
            "GB",
            &[
                ("lt256", "Under 256 GB", None, Some(256.0)),
                ("256-511", "256 - 511 GB", Some(256.0), Some(512.0)),
                ("512-999", "512 - 999 GB", Some(512.0), Some(1000.0)),
                ("gte1000", "1 TB and above", Some(1000.0), None),
            ],
        ),
        numeric(
            "ram_size",
            "RAM size",
            "GB",
            &[
                ("lte4", "4 GB and below", None, Some(6.0)),
                ("8", "8 GB", Some(6.0), Some(12.0)),
                ("16", "16 GB", Some(12.0), Some(24.0)),
                ("gte32", "32 GB and above", Some(24.0), None),
            ],
        ),
        numeric(
            "cpu_cores",
            "CPU cores",
            "cores",
            &[
                ("2", "2", None, Some(3.0)),
                ("4", "4", Some(3.0), Some(5.0)),
                ("6", "6", Some(5.0), Some(7.0)),
                ("gte8", "8 and more", Some(7.0), None),
            ],
        ),
        numeric(
            "cpu_speed",
            "CPU speed",
            "GHz",
            &[
                ("lt2", "Under 2 GHz", None, Some(2.0)),
                ("2-3", "2 - 3 GHz", Some(2.0), Some(3.0)),
                ("3-4", "3 - 4 GHz", Some(3.0), Some(4.0)),
                ("gte4", "4 GHz and above", Some(4.0), None),
            ],
        ),
        categorical(
            "cpu_brand",
            "CPU brand",
            &[("intel", "Intel", &["intel"]), ("amd", "AMD", &["amd"]), ("apple", "Apple", &["apple"])],
        ),
        numeric(
            "battery_life",
            "Battery life",
            "hours",
            &[
                ("lt6", "Under 6 hours", None, Some(6.0)),
                ("6-9", "6 - 9 hours", Some(6.0), Some(9.0)),
                ("9-12", "9 - 12 hours", Some(9.0), Some(12.0)),
                ("gte12", "12 hours and above", Some(12.0), None),
            ],
        ),
    ];
    FacetSchema::new("laptops-v1", facets).expect("laptop schema is valid")
}

/// Pool spec reproducing the published "any" counts. Screen-size bin counts
/// are fixed to [`SCREEN_SIZE_COUNTS`]; every other facet's bin counts are
/// drawn from `draw` with `seed`.
pub fn table1_pool_spec(seed: u64, draw: &ValueDraw) -> SyntheticPoolSpec {
    let schema = laptop_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7AB1E1);
    let facets = TABLE1
        .iter()
        .map(|(facet_id, any_count, _)| {
            let facet = schema.facet(facet_id).expect("table facets exist in schema");
            let users_specific = SURVEY_USERS - any_count;
            let bin_counts: BTreeMap<String, u64> = if *facet_id == "screen_size" {
                SCREEN_SIZE_COUNTS.iter().map(|(b, c)| (b.to_string(), *c)).collect()
            } else {
                draw_bin_counts(facet, users_specific, draw, &mut rng)
            };
            FacetPoolSpec { facet_id: facet_id.to_string(), any_count: *any_count, bin_counts }
        })
        .collect();
    SyntheticPoolSpec {
        total_users: SURVEY_USERS,
        facets,
        tasks: Some(TaskFlagSpec {
            basic_users: BASIC_USERS,
            task_counts: TASK_COUNTS_APPROX.iter().map(|(t, c)| (t.to_string(), *c)).collect(),
        }),
        seed,
    }
}
