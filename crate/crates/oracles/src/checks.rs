//! Implementation-against-oracle checks and metamorphic properties, shared
//! by the property tests and the acceptance run. Each returns `Err` with a
//! description of the first violation; inapplicable inputs pass.

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use undr_core::catalog::{bin_attribute, AttributeValue, FacetDef, FacetKind, FacetSchema, ValueBin};
use undr_core::fraction::ratio_from_str;
use undr_core::harness::compare_rankings;
use undr_core::ranking::{rank_by_rating, rank_undr};
use undr_core::stats::{bonferroni, mann_whitney_u, wilcoxon_signed_rank, PairedSample, Sidedness};
use undr_core::weights::{build_weight_table, BuildOptions, WeightTable, WeightsError};
use undr_core::{CohortSpec, Fraction, RankedList, Selection};

use crate::{random_instance, Instance, Limits, Tail};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// A random instance over the whole pool.
pub fn instance(seed: u64) -> Instance {
    let mut inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), Limits::default());
    inst.cohort = CohortSpec::all();
    inst
}

pub fn table_for(inst: &Instance) -> WeightTable {
    let options = BuildOptions { mode: inst.mode, min_pool: 0 };
    build_weight_table(&inst.records, &inst.schema, &inst.cohort, &inst.tasks, &options).expect("instance has records")
}

fn exact_scores(list: &RankedList) -> Vec<(String, Option<String>, Option<usize>)> {
    list.entries.iter().map(|e| (e.product_id.clone(), e.exact_score.clone(), e.coverage)).collect()
}

/// Weight table, UNDR ranking and rating baseline against brute force.
pub fn oracle_equivalence(inst: &Instance) -> Check {
    let options = BuildOptions { mode: inst.mode, min_pool: 0 };
    let built = build_weight_table(&inst.records, &inst.schema, &inst.cohort, &inst.tasks, &options);
    let oracle = crate::weight_table(&inst.records, &inst.schema, &inst.cohort, &inst.tasks, inst.mode);
    let (table, expected) = match (built, oracle) {
        (Err(WeightsError::EmptyCohort(_)), None) => return Ok(()),
        (Ok(t), Some(o)) => (t, o),
        (b, o) => return Err(format!("disagree on emptiness: {b:?} vs {o:?}")),
    };
    ensure!(table.total_users == expected.total_users, "total_users {} vs {}", table.total_users, expected.total_users);
    ensure!(table.facets.len() == expected.facets.len(), "facet count");
    for (got, want) in table.facets.iter().zip(&expected.facets) {
        ensure!(got.facet_id == want.facet_id, "facet order {} vs {}", got.facet_id, want.facet_id);
        ensure!(got.any_count == want.any_count, "{}: any {} vs {}", got.facet_id, got.any_count, want.any_count);
        ensure!(got.facet_weight.to_ratio() == want.facet_weight, "{}: w_f {} vs {}", got.facet_id, got.facet_weight, want.facet_weight);
        ensure!(got.values.len() == want.value_weights.len(), "{}: bin count", got.facet_id);
        for v in &got.values {
            let w = want.value_weights.get(&v.bin_id);
            ensure!(w == Some(&v.value_weight.to_ratio()), "{}/{}: {} vs {w:?}", got.facet_id, v.bin_id, v.value_weight);
        }
    }

    let ranked = rank_undr(&inst.catalog, &table, &inst.schema).map_err(|e| e.to_string())?;
    let want = crate::rank(&inst.catalog, &expected, &inst.schema);
    ensure!(ranked.len() == want.len(), "ranking length {} vs {}", ranked.len(), want.len());
    for (entry, w) in ranked.entries.iter().zip(&want) {
        ensure!(entry.product_id == w.product_id, "rank {}: {} vs {}", entry.rank, entry.product_id, w.product_id);
        let exact: Option<BigRational> = entry.exact_score.as_deref().and_then(ratio_from_str);
        ensure!(exact.as_ref() == Some(&w.score), "{}: score {:?} vs {}", w.product_id, entry.exact_score, w.score);
        ensure!(entry.coverage == Some(w.coverage), "{}: coverage {:?} vs {}", w.product_id, entry.coverage, w.coverage);
    }

    let baseline = rank_by_rating(&inst.catalog).map_err(|e| e.to_string())?;
    ensure!(baseline.ordering() == crate::rank_by_rating(&inst.catalog), "baseline order differs");

    let report = compare_rankings(&ranked, &baseline, 3).map_err(|e| e.to_string())?;
    ensure!((0.0..=1.0).contains(&report.top_k_overlap), "overlap {}", report.top_k_overlap);
    if let Some(t) = report.kendall_tau_b {
        ensure!((-1.0..=1.0).contains(&t), "tau {t}");
    }
    Ok(())
}

/// Multiplying every facet weight by `num/den` keeps the order.
pub fn scaling_invariance(seed: u64, num: u64, den: u64) -> Check {
    let inst = instance(seed);
    let table = table_for(&inst);
    let mut scaled = table.clone();
    for f in &mut scaled.facets {
        f.facet_weight = f.facet_weight.mul(&Fraction::new(num, den));
    }
    let a = rank_undr(&inst.catalog, &table, &inst.schema).map_err(|e| e.to_string())?;
    let b = rank_undr(&inst.catalog, &scaled, &inst.schema).map_err(|e| e.to_string())?;
    ensure!(a.ordering() == b.ordering(), "seed {seed} x{num}/{den}: {:?} vs {:?}", a.ordering(), b.ordering());
    Ok(())
}

/// Adding a facet that every shopper answered "any" changes no score.
pub fn null_facet_invariance(seed: u64, values: &[usize]) -> Check {
    let inst = instance(seed);
    let before = rank_undr(&inst.catalog, &table_for(&inst), &inst.schema).map_err(|e| e.to_string())?;
    let null = FacetDef {
        facet_id: "null".into(),
        label: "null".into(),
        kind: FacetKind::Categorical,
        values: vec![ValueBin::categorical("a", "a", ["a"]), ValueBin::categorical("b", "b", ["b"])],
        unit: None,
    };
    let mut facets = inst.schema.facets.clone();
    facets.push(null);
    let mut widened = inst.clone();
    widened.schema = FacetSchema::new("widened", facets).map_err(|e| e.to_string())?;
    for r in &mut widened.records {
        r.selections.insert("null".into(), Selection::Any);
    }
    for (p, v) in widened.catalog.iter_mut().zip(values.iter().cycle()) {
        p.attributes.insert("null".into(), AttributeValue::Text(["a", "b", "c"][v % 3].into()));
    }
    let after = rank_undr(&widened.catalog, &table_for(&widened), &widened.schema).map_err(|e| e.to_string())?;
    ensure!(exact_scores(&before) == exact_scores(&after), "seed {seed}: scores moved after adding a null facet");
    Ok(())
}

/// Replicating the pool leaves every weight and score unchanged.
pub fn replication_invariance(seed: u64, copies: usize) -> Check {
    let inst = instance(seed);
    let table = table_for(&inst);
    let mut replicated = inst.clone();
    replicated.records = (0..copies)
        .flat_map(|c| {
            inst.records.iter().map(move |r| {
                let mut r = r.clone();
                r.record_id = format!("{}-{c}", r.record_id);
                r
            })
        })
        .collect();
    let big = table_for(&replicated);
    ensure!(big.total_users == table.total_users * copies as u64, "seed {seed}: total_users");
    for (a, b) in table.facets.iter().zip(&big.facets) {
        ensure!(a.facet_weight.to_ratio() == b.facet_weight.to_ratio(), "seed {seed}: w_f of {}", a.facet_id);
        for (va, vb) in a.values.iter().zip(&b.values) {
            ensure!(va.value_weight.to_ratio() == vb.value_weight.to_ratio(), "seed {seed}: {}/{}", a.facet_id, va.bin_id);
        }
    }
    let ra = rank_undr(&inst.catalog, &table, &inst.schema).map_err(|e| e.to_string())?;
    let rb = rank_undr(&inst.catalog, &big, &inst.schema).map_err(|e| e.to_string())?;
    ensure!(exact_scores(&ra) == exact_scores(&rb), "seed {seed}: scores differ after replication");
    Ok(())
}

fn value_inside(facet: &FacetDef, bin: &ValueBin) -> AttributeValue {
    match facet.kind {
        FacetKind::Categorical => AttributeValue::Text(bin.match_values.iter().next().cloned().unwrap_or_default()),
        FacetKind::NumericRange => match (bin.lower, bin.upper) {
            (Some(lo), _) => AttributeValue::Number(lo),
            (None, Some(hi)) => AttributeValue::Number(hi - 0.5),
            (None, None) => AttributeValue::Number(0.0),
        },
    }
}

/// Moving one product's attribute into a bin with at least the same value
/// weight never lowers its rank.
pub fn bin_upgrade_monotonicity(seed: u64, pick: u64) -> Check {
    let inst = instance(seed);
    if inst.catalog.is_empty() {
        return Ok(());
    }
    let table = table_for(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(pick);
    let p = rng.gen_range(0..inst.catalog.len());
    let f = rng.gen_range(0..inst.schema.facets.len());
    let facet = &inst.schema.facets[f];
    let weights = &table.facets[f];
    let product = &inst.catalog[p];
    let current = product
        .attributes
        .get(&facet.facet_id)
        .and_then(|raw| bin_attribute(facet, raw).ok().flatten())
        .and_then(|b| weights.value_weight(&b.bin_id))
        .unwrap_or(Fraction::ZERO);
    let heavier: Vec<&ValueBin> =
        facet.values.iter().filter(|b| weights.value_weight(&b.bin_id).is_some_and(|w| w >= current)).collect();
    if heavier.is_empty() {
        return Ok(());
    }
    let target = heavier[rng.gen_range(0..heavier.len())];
    let before = rank_undr(&inst.catalog, &table, &inst.schema).map_err(|e| e.to_string())?;
    let mut moved = inst.catalog.clone();
    moved[p].attributes.insert(facet.facet_id.clone(), value_inside(facet, target));
    let after = rank_undr(&moved, &table, &inst.schema).map_err(|e| e.to_string())?;
    let rank_of = |l: &RankedList| l.entries.iter().find(|e| e.product_id == product.product_id).map(|e| e.rank);
    ensure!(rank_of(&after) <= rank_of(&before), "seed {seed}: {:?} -> {:?}", rank_of(&before), rank_of(&after));
    Ok(())
}

pub const SIDES: [(Sidedness, Tail); 3] =
    [(Sidedness::OneSidedGreater, Tail::Greater), (Sidedness::OneSidedLess, Tail::Less), (Sidedness::TwoSided, Tail::TwoSided)];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

/// Exact Wilcoxon p-values against sign-pattern enumeration.
pub fn wilcoxon_matches(pairs: &[(f64, f64)]) -> Check {
    let sample = PairedSample::new(pairs.to_vec()).map_err(|e| e.to_string())?;
    for (side, tail) in SIDES {
        match (wilcoxon_signed_rank(&sample, side), crate::wilcoxon(pairs, tail)) {
            (Ok(r), Some((stat, p))) => {
                ensure!(r.exact && r.n_effective <= 10, "{pairs:?}: not exact");
                ensure!(r.statistic == stat, "{pairs:?} {side:?}: W {} vs {stat}", r.statistic);
                ensure!(close(r.p_value, p), "{pairs:?} {side:?}: p {} vs {p}", r.p_value);
            }
            (Err(_), None) => {}
            (r, o) => return Err(format!("{pairs:?}: disagree {r:?} vs {o:?}")),
        }
    }
    Ok(())
}

/// Exact Mann-Whitney p-values against subset enumeration.
pub fn mann_whitney_matches(x: &[f64], y: &[f64]) -> Check {
    for (side, tail) in SIDES {
        let r = mann_whitney_u(x, y, side).map_err(|e| e.to_string())?;
        let (u, p) = crate::mann_whitney(x, y, tail);
        ensure!(r.exact, "{x:?} {y:?}: not exact");
        ensure!(r.statistic == u, "{x:?} {y:?} {side:?}: U {} vs {u}", r.statistic);
        ensure!(close(r.p_value, p), "{x:?} {y:?} {side:?}: p {} vs {p}", r.p_value);
    }
    Ok(())
}

pub fn bonferroni_matches(p: &[f64]) -> Check {
    let got = bonferroni(p).map_err(|e| e.to_string())?;
    let want = crate::bonferroni(p);
    ensure!(got.len() == want.len(), "length");
    for (g, w) in got.iter().zip(&want) {
        ensure!(close(*g, *w) && (0.0..=1.0).contains(g), "{p:?}: {g} vs {w}");
    }
    Ok(())
}
