//! CART checks against independent oracles: exhaustive root-split search and
//! a naive walk over the serialized tree.

mod common;

use std::collections::HashMap;

use common::*;
use cytotune_core::tree::{evaluate, root_split, train, TrainConfig};
use cytotune_core::{CellClass, CellSample, NUM_CLASSES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct OracleSplit {
    feature: usize,
    impurity: f64,
    left: Vec<usize>,
}

fn counted_gini(labels: &[CellClass]) -> f64 {
    let mut by_class: HashMap<CellClass, usize> = HashMap::new();
    for l in labels {
        *by_class.entry(*l).or_default() += 1;
    }
    let n = labels.len() as f64;
    1.0 - by_class.values().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Every (feature, midpoint) split, scored by direct counting.
fn exhaustive_root(data: &[CellSample], min_leaf: usize) -> Vec<OracleSplit> {
    let n_features = data[0].features.len();
    let mut out = Vec::new();
    for f in 0..n_features {
        let mut values: Vec<f64> = data.iter().map(|s| s.features[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| data[i].features[f] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let labels = |idx: &[usize]| idx.iter().map(|&i| data[i].true_label.unwrap()).collect::<Vec<_>>();
            let n = data.len() as f64;
            let impurity = l.len() as f64 / n * counted_gini(&labels(&l))
                + r.len() as f64 / n * counted_gini(&labels(&r));
            out.push(OracleSplit {
                feature: f,
                impurity,
                left: l,
            });
        }
    }
    out
}

fn check_root_against_oracle(data: &[CellSample], n_features: usize, min_leaf: usize) {
    let schema = unit_schema(n_features);
    let config = TrainConfig {
        max_depth: 4,
        min_leaf_samples: min_leaf,
        ..TrainConfig::default()
    };
    let got = root_split(data, &schema, &config).unwrap();
    let all: Vec<CellClass> = data.iter().map(|s| s.true_label.unwrap()).collect();
    let parent = counted_gini(&all);
    let candidates = exhaustive_root(data, min_leaf);
    let best = candidates
        .iter()
        .map(|c| c.impurity)
        .fold(f64::INFINITY, f64::min);
    let splits_expected = data.len() >= 2 * min_leaf && parent > 0.0 && best < parent - 1e-12;
    match got {
        None => assert!(!splits_expected, "oracle found a gain of {}", parent - best),
        Some(split) => {
            assert!(splits_expected);
            assert!((split.impurity - best).abs() < 1e-12, "{} vs {best}", split.impurity);
            let winners: Vec<&OracleSplit> = candidates
                .iter()
                .filter(|c| (c.impurity - best).abs() < 1e-9)
                .collect();
            let left: Vec<usize> = (0..data.len())
                .filter(|&i| data[i].features[split.feature] <= split.threshold)
                .collect();
            if winners.len() == 1 {
                assert_eq!(split.feature, winners[0].feature);
                assert_eq!(left, winners[0].left);
            } else {
                assert!(winners.iter().any(|w| w.feature == split.feature && w.left == left));
            }
        }
    }
}

#[test]
fn four_point_example_splits_on_second_feature() {
    let a = CellClass::Ciliated;
    let b = CellClass::Basal;
    let data = vec![
        CellSample::labeled("1", vec![0.0, 0.0], a),
        CellSample::labeled("2", vec![1.0, 0.0], a),
        CellSample::labeled("3", vec![0.0, 1.0], b),
        CellSample::labeled("4", vec![1.0, 1.0], b),
    ];
    let candidates = exhaustive_root(&data, 1);
    let zero: Vec<_> = candidates.iter().filter(|c| c.impurity == 0.0).collect();
    assert_eq!(zero.len(), 1);
    assert_eq!(zero[0].feature, 1);
    check_root_against_oracle(&data, 2, 1);
    let config = TrainConfig {
        min_leaf_samples: 1,
        ..TrainConfig::default()
    };
    let m = train(&data, None, &unit_schema(2), &config).unwrap();
    assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
}

#[test]
fn small_corpus_root_splits_match_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..400 {
        let n = rng.random_range(1..=20);
        let f = rng.random_range(1..=3);
        let classes = rng.random_range(1..=4);
        let data = random_dataset(&mut rng, n, f, classes, 6);
        let min_leaf = rng.random_range(1..=3);
        check_root_against_oracle(&data, f, min_leaf);
    }
}

/// Prediction by walking the serialized JSON tree.
fn naive_walk(tree: &Value, features: &[f64]) -> (CellClass, [f64; NUM_CLASSES]) {
    let nodes = tree["nodes"].as_array().unwrap();
    let mut id = tree["root"].as_u64().unwrap() as usize;
    loop {
        let node = &nodes[id];
        if node["kind"] == "internal" {
            let f = node["feature"].as_u64().unwrap() as usize;
            let t = node["threshold"].as_f64().unwrap();
            let key = if features[f] <= t { "left" } else { "right" };
            id = node[key].as_u64().unwrap() as usize;
            continue;
        }
        let mut mass = [0.0; NUM_CLASSES];
        for (k, m) in mass.iter_mut().enumerate() {
            *m = node["class_counts"][k].as_f64().unwrap() + node["pseudo_counts"][k].as_f64().unwrap();
        }
        let total: f64 = mass.iter().sum();
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if mass[k] > mass[best] {
                best = k;
            }
        }
        return (CellClass::ALL[best], mass.map(|m| m / total));
    }
}

#[test]
fn predict_matches_naive_walk_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    while cases < 1000 {
        let f = rng.random_range(1..=4);
        let n = rng.random_range(5..80);
        let data = random_dataset(&mut rng, n, f, 9, 20);
        let config = TrainConfig {
            max_depth: rng.random_range(1..=6),
            min_leaf_samples: rng.random_range(1..=4),
            ..TrainConfig::default()
        };
        let m = train(&data, None, &unit_schema(f), &config).unwrap();
        let json: Value = serde_json::from_slice(&m.canonical_json()).unwrap();
        for k in 0..20 {
            let s = random_sample(&mut rng, &format!("q{k}"), f);
            let p = m.predict(&s, 0).unwrap();
            let (class, dist) = naive_walk(&json, &s.features);
            assert_eq!(p.predicted, class);
            for (a, b) in p.distribution().iter().zip(dist) {
                assert!((a - b).abs() < 1e-15);
            }
            cases += 1;
        }
    }
}

#[test]
fn evaluate_matches_independent_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_dataset(&mut rng, 200, 3, 5, 10);
    let m = train(&data, None, &unit_schema(3), &TrainConfig::default()).unwrap();
    let test = random_dataset(&mut rng, 150, 3, 5, 10);
    let json: Value = serde_json::from_slice(&m.canonical_json()).unwrap();
    let mut hits = 0;
    let mut per_class: HashMap<CellClass, (usize, usize)> = HashMap::new();
    for s in &test {
        let (pred, _) = naive_walk(&json, &s.features);
        let truth = s.true_label.unwrap();
        let e = per_class.entry(truth).or_default();
        e.1 += 1;
        if pred == truth {
            hits += 1;
            e.0 += 1;
        }
    }
    let ev = evaluate(&m, &test).unwrap();
    assert_eq!(ev.correct, hits);
    assert!((ev.accuracy - hits as f64 / 150.0).abs() < 1e-15);
    assert_eq!(ev.per_class_recall.len(), per_class.len());
    for (c, (h, n)) in per_class {
        assert!((ev.per_class_recall[&c] - h as f64 / n as f64).abs() < 1e-15);
    }
}

fn arb_dataset() -> impl Strategy<Value = (Vec<CellSample>, usize)> {
    (1usize..=3, 2usize..60, any::<u64>()).prop_map(|(f, n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_dataset(&mut rng, n, f, 9, 12), f)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn training_is_deterministic((data, f) in arb_dataset(), depth in 1usize..7, leaf in 1usize..5) {
        let config = TrainConfig { max_depth: depth, min_leaf_samples: leaf, ..TrainConfig::default() };
        let a = train(&data, None, &unit_schema(f), &config).unwrap();
        let b = train(&data, None, &unit_schema(f), &config).unwrap();
        prop_assert_eq!(a.content_hash(), b.content_hash());
        prop_assert!(a.depth() <= depth);
    }

    #[test]
    fn leaves_are_normalized((data, f) in arb_dataset()) {
        let config = TrainConfig { min_leaf_samples: 1, ..TrainConfig::default() };
        let m = train(&data, None, &unit_schema(f), &config).unwrap();
        for (id, node) in m.nodes().iter().enumerate() {
            if node.is_leaf() {
                let total: f64 = m.leaf_distribution(id).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn serialization_round_trips((data, f) in arb_dataset()) {
        let config = TrainConfig { min_leaf_samples: 1, ..TrainConfig::default() };
        let m = train(&data, None, &unit_schema(f), &config).unwrap();
        let back: cytotune_core::TreeModel = serde_json::from_slice(&m.canonical_json()).unwrap();
        prop_assert_eq!(back.canonical_json(), m.canonical_json());
        let samples: Vec<CellSample> = serde_json::from_str(&serde_json::to_string(&data).unwrap()).unwrap();
        prop_assert_eq!(samples, data);
    }
}
