use proptest::prelude::*;
use undr_core::catalog::filter_catalog;
use undr_core::needslog::{cohort_partition, parse_records, validate_record, ParseOptions, RecordFormat};
use undr_core::ranking::rank_undr;
use undr_core::{Fraction, RankedList};
use undr_oracles::checks::{self, instance, table_for};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ordering_is_invariant_under_facet_weight_scaling(seed in any::<u64>(), num in 1u64..20, den in 1u64..20) {
        checks::scaling_invariance(seed, num, den).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn all_any_facet_does_not_change_ranking(seed in any::<u64>(), values in prop::collection::vec(0usize..3, 1..10)) {
        checks::null_facet_invariance(seed, &values).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn replicating_the_pool_keeps_weights(seed in any::<u64>(), copies in 2usize..5) {
        checks::replication_invariance(seed, copies).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn moving_to_a_heavier_bin_never_lowers_rank(seed in any::<u64>(), pick in any::<u64>()) {
        checks::bin_upgrade_monotonicity(seed, pick).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn catalog_filter_is_idempotent_and_monotone(seed in any::<u64>(), lo in 0u64..15, extra in 0u64..10) {
        let inst = instance(seed);
        let once = filter_catalog(&inst.catalog, &inst.schema, lo);
        prop_assert_eq!(&filter_catalog(&once, &inst.schema, lo), &once);
        let stricter = filter_catalog(&inst.catalog, &inst.schema, lo + extra);
        prop_assert!(stricter.iter().all(|p| once.contains(p)));
    }

    #[test]
    fn cohorts_partition_the_pool(seed in any::<u64>()) {
        let inst = instance(seed);
        let parts = cohort_partition(&inst.records, &inst.tasks);
        prop_assert_eq!(parts["basic"].len() + parts["advanced"].len(), inst.records.len());
        prop_assert!(parts["basic"].iter().all(|r| !parts["advanced"].contains(r)));
        let mut merged: Vec<_> = parts["basic"].iter().chain(&parts["advanced"]).map(|r| r.record_id.clone()).collect();
        let mut original: Vec<_> = inst.records.iter().map(|r| r.record_id.clone()).collect();
        merged.sort();
        original.sort();
        prop_assert_eq!(merged, original);
        prop_assert_eq!(&parts["all"], &inst.records);
    }

    #[test]
    fn parsed_records_always_validate(seed in any::<u64>(), garbage in prop::collection::vec(any::<String>(), 0..10), flips in prop::collection::vec(any::<u8>(), 0..20)) {
        let inst = instance(seed);
        let mut lines: Vec<String> = inst.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        for (i, flip) in flips.iter().enumerate() {
            if lines.is_empty() {
                break;
            }
            let idx = i % lines.len();
            let line = &mut lines[idx];
            match flip % 4 {
                0 => *line = line.replace("\"any\"", "[]"),
                1 => *line = line.replacen("\"r", "\"zz", 1),
                2 => *line = line.replacen("f0", "nope", 1),
                _ => line.truncate(line.len() / 2),
            }
        }
        lines.extend(garbage.into_iter().map(|g| g.replace('\n', " ")));
        let text = lines.join("\n");
        let outcome = parse_records(text.as_bytes(), RecordFormat::JsonLines, &inst.schema, &ParseOptions::default()).unwrap();
        for r in &outcome.records {
            prop_assert!(validate_record(r, &inst.schema, &inst.tasks).is_ok());
        }
        let mut ids: Vec<&str> = outcome.records.iter().map(|r| r.record_id.as_str()).collect();
        let total = ids.len();
        ids.dedup();
        prop_assert_eq!(ids.len(), total);
        let nonblank = text.lines().filter(|l| !l.trim().is_empty()).count();
        prop_assert_eq!(outcome.records.len() + outcome.rejected.len(), nonblank);
    }
}

#[test]
fn scaling_keeps_exact_ties() {
    let inst = instance(42);
    let table = table_for(&inst);
    let mut doubled = table.clone();
    for f in &mut doubled.facets {
        f.facet_weight = f.facet_weight.mul(&Fraction::new(2, 1));
    }
    let a = rank_undr(&inst.catalog, &table, &inst.schema).unwrap();
    let b = rank_undr(&inst.catalog, &doubled, &inst.schema).unwrap();
    let ties = |l: &RankedList| l.entries.iter().map(|e| e.tie_break).collect::<Vec<_>>();
    assert_eq!(ties(&a), ties(&b));
}
