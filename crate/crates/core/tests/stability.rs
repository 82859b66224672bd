mod common;

use std::collections::BTreeMap;

use common::{brute_force_buckets, random_distribution};
use proptest::prelude::*;
use seedstab_core::interpret::{InterpretationDistribution, Method};
use seedstab_core::stability::{
    aggregate_observations, bucket_of, jaccard_distance, pairwise_entropy, relative_entropy,
    InstanceObservation, ReportOptions,
};
use seedstab_core::SeededRng;

fn dist(p: Vec<f64>) -> InterpretationDistribution {
    InterpretationDistribution::new(p).unwrap()
}

#[test]
fn gibbs_inequality_on_random_pairs() {
    let mut rng = SeededRng::new(4);
    for _ in 0..10_000 {
        let d = 1 + rng.below(12);
        let p = random_distribution(&mut rng, d);
        let q = random_distribution(&mut rng, d);
        let h = relative_entropy(&dist(p.clone()), &dist(q.clone())).unwrap();
        assert!(h >= 0.0);
        let close = p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12);
        if !close {
            assert!(h > 0.0 || d == 1, "{p:?} {q:?}");
        }
    }
}

#[test]
fn pairwise_entropy_counts_both_directions() {
    let p = dist(vec![0.5, 0.5]);
    let q = dist(vec![0.9, 0.1]);
    let forward = relative_entropy(&p, &q).unwrap();
    let backward = relative_entropy(&q, &p).unwrap();
    assert!((forward - 0.510826).abs() < 1e-6);
    assert!((backward - 0.368064).abs() < 1e-6);
    let both = pairwise_entropy(&[p, q]).unwrap();
    assert!((both - 0.439445).abs() < 1e-6);
}

/// Builds observations from `dists[s][m]` and positive-class `preds[s][m]`.
fn observations(dists: &[Vec<Vec<f64>>], preds: &[Vec<f64>]) -> Vec<InstanceObservation> {
    dists
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(s, (per_model, p))| {
            let mut interpretations = BTreeMap::new();
            interpretations.insert(
                Method::Attention,
                per_model.iter().map(|d| Some(dist(d.clone()))).collect(),
            );
            InstanceObservation {
                sample_id: format!("s{s}"),
                label: s % 2,
                predictions: p.iter().map(|&x| vec![1.0 - x, x]).collect(),
                interpretations,
            }
        })
        .collect()
}

fn assert_matches_brute_force(dists: &[Vec<Vec<f64>>], preds: &[Vec<f64>], top: f64) {
    let options = ReportOptions {
        top_fraction: top,
        ..ReportOptions::default()
    };
    let tables =
        aggregate_observations(&observations(dists, preds), &[Method::Attention], &options)
            .unwrap();
    let oracle = brute_force_buckets(dists, preds, top);
    for (b, (got, want)) in tables.methods[0].buckets.iter().zip(&oracle).enumerate() {
        assert_eq!(got.count, want.3, "bucket {b}");
        assert!(
            (got.mean_pairwise_entropy - want.0).abs() <= 1e-12,
            "bucket {b}"
        );
        assert!(
            (got.mean_jaccard_percent - want.1).abs() <= 1e-12,
            "bucket {b}"
        );
        assert!((got.prediction_std - want.2).abs() <= 1e-12, "bucket {b}");
    }
}

#[test]
fn hand_pinned_three_model_report() {
    let dists = vec![
        vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.2, 0.7],
            vec![0.3, 0.4, 0.3],
        ],
        vec![
            vec![0.25, 0.25, 0.5],
            vec![0.25, 0.25, 0.5],
            vec![0.5, 0.25, 0.25],
        ],
        vec![vec![0.6, 0.4], vec![0.4, 0.6], vec![0.5, 0.5]],
        vec![vec![1.0], vec![1.0], vec![1.0]],
    ];
    let preds = vec![
        vec![0.91, 0.95, 0.99],
        vec![0.12, 0.18, 0.11],
        vec![0.93, 0.97, 0.9],
        vec![0.5, 0.5, 0.5],
    ];
    assert_matches_brute_force(&dists, &preds, 0.34);
}

#[test]
fn random_small_reports_match_brute_force() {
    let mut rng = SeededRng::new(17);
    for _ in 0..200 {
        let models = 2 + rng.below(3);
        let samples = 1 + rng.below(10);
        let mut dists = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..samples {
            let d = 1 + rng.below(6);
            dists.push(
                (0..models)
                    .map(|_| random_distribution(&mut rng, d))
                    .collect(),
            );
            preds.push(rng.uniform_vec(0.0, 1.0, models).unwrap());
        }
        let top = [0.2, 0.5, 1.0][rng.below(3)];
        assert_matches_brute_force(&dists, &preds, top);
    }
}

#[test]
fn two_models_contribute_one_ordered_pair_each_way() {
    // with two models, the pair mean is (KL(p||q) + KL(q||p)) / 2
    let dists = vec![vec![vec![0.5, 0.5], vec![0.9, 0.1]]];
    let preds = vec![vec![0.3, 0.3]];
    let tables = aggregate_observations(
        &observations(&dists, &preds),
        &[Method::Attention],
        &ReportOptions::default(),
    )
    .unwrap();
    let b = &tables.methods[0].buckets[3];
    assert_eq!(b.count, 1);
    assert!(
        (b.mean_pairwise_entropy - (0.5108256237659907 + 0.3680642071684971) / 2.0).abs() < 1e-12
    );
}

#[test]
fn multiclass_reports_split_by_label() {
    let mut obs = Vec::new();
    for (label, gold_p) in [(0usize, 0.8), (2, 0.35), (2, 0.32)] {
        let mut interpretations = BTreeMap::new();
        interpretations.insert(
            Method::Attention,
            vec![Some(dist(vec![0.5, 0.5])), Some(dist(vec![0.9, 0.1]))],
        );
        let mut p = vec![(1.0 - gold_p) / 2.0; 3];
        p[label] = gold_p;
        obs.push(InstanceObservation {
            sample_id: format!("{label}-{gold_p}"),
            label,
            predictions: vec![p.clone(), p],
            interpretations,
        });
    }
    let t = aggregate_observations(&obs, &[Method::Attention], &ReportOptions::default()).unwrap();
    assert_eq!(t.per_label.len(), 2);
    assert_eq!(t.per_label[0].label, 0);
    assert_eq!(t.per_label[0].methods[0].buckets[8].count, 1);
    assert_eq!(t.per_label[1].label, 2);
    assert_eq!(t.per_label[1].methods[0].buckets[3].count, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jaccard_is_symmetric_and_bounded(
        a in prop::collection::btree_set(0usize..12, 1..8),
        b in prop::collection::btree_set(0usize..12, 1..8),
    ) {
        let a: Vec<usize> = a.into_iter().collect();
        let b: Vec<usize> = b.into_iter().collect();
        let ab = jaccard_distance(&a, &b).unwrap();
        let ba = jaccard_distance(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(jaccard_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn identical_distributions_have_zero_pairwise_entropy(
        raw in prop::collection::vec(0.01f64..1.0, 1..10),
        n in 2usize..6,
    ) {
        let total: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let drift = 1.0 - p.iter().sum::<f64>();
        p[0] += drift;
        let copies = vec![dist(p); n];
        prop_assert_eq!(pairwise_entropy(&copies).unwrap(), 0.0);
    }

    #[test]
    fn buckets_partition_the_unit_interval(p in 0.0f64..=1.0) {
        let b = bucket_of(p).unwrap();
        prop_assert!(b < 10);
        let lo = b as f64 / 10.0;
        let hi = (b + 1) as f64 / 10.0;
        prop_assert!(p >= lo - 1e-12);
        prop_assert!(p < hi || (b == 9 && p <= 1.0));
    }
}
