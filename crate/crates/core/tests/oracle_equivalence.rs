use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use undr_core::harness::{compare_rankings, kendall_tau_b};
use undr_core::ranking::{rank_by_rating, rank_undr};
use undr_core::weights::{build_weight_table, BuildOptions};
use undr_oracles::{random_instance, Limits};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn weights_and_ranking_match_brute_force(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), Limits::default());
        undr_oracles::checks::oracle_equivalence(&inst).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn kendall_matches_pairwise_concordance(pairs in prop::collection::vec((0u8..5, 0u8..5), 0..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let fast = kendall_tau_b(&x, &y);
        let slow = undr_oracles::kendall_tau_b(&x, &y);
        match (fast, slow) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}

#[test]
fn compare_is_antisymmetric_for_reversed_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = loop {
        let i = random_instance(&mut rng, Limits::default());
        if i.catalog.len() >= 5 && !i.records.is_empty() {
            break i;
        }
    };
    let table = build_weight_table(&inst.records, &inst.schema, &undr_core::CohortSpec::all(), &inst.tasks, &BuildOptions::default()).unwrap();
    let a = rank_undr(&inst.catalog, &table, &inst.schema).unwrap();
    let b = rank_by_rating(&inst.catalog).unwrap();
    let ab = compare_rankings(&a, &b, 3).unwrap();
    let ba = compare_rankings(&b, &a, 3).unwrap();
    assert_eq!(ab.top_k_overlap, ba.top_k_overlap);
    match (ab.kendall_tau_b, ba.kendall_tau_b) {
        (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
        (x, y) => assert_eq!(x, y),
    }
}

#[test]
fn tau_of_reversed_strict_order_is_minus_one() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y: Vec<f64> = x.iter().rev().copied().collect();
    assert_eq!(kendall_tau_b(&x, &y), Some(-1.0));
    assert_eq!(undr_oracles::kendall_tau_b(&x, &y), Some(-1.0));
}
