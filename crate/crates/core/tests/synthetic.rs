use std::collections::BTreeMap;

use seedstab_core::{generate_synthetic, Split, SyntheticSpec};

/// Bag-of-words perceptron, the linear-probe oracle for cue separability.
fn perceptron_train_accuracy(samples: &[(Vec<String>, usize)], epochs: usize) -> f64 {
    let mut w: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bias = 0.0;
    let score = |w: &BTreeMap<&str, f64>, bias: f64, toks: &[String]| {
        bias + toks
            .iter()
            .map(|t| w.get(t.as_str()).copied().unwrap_or(0.0))
            .sum::<f64>()
    };
    for _ in 0..epochs {
        let mut mistakes = 0;
        for (toks, label) in samples {
            let y = if *label == 1 { 1.0 } else { -1.0 };
            if y * score(&w, bias, toks) <= 0.0 {
                mistakes += 1;
                for t in toks {
                    *w.entry(t.as_str()).or_default() += y;
                }
                bias += y;
            }
        }
        if mistakes == 0 {
            break;
        }
    }
    let correct = samples
        .iter()
        .filter(|(toks, label)| (score(&w, bias, toks) > 0.0) == (*label == 1))
        .count();
    correct as f64 / samples.len() as f64
}

#[test]
fn single_noise_free_cue_is_linearly_separable() {
    let spec = SyntheticSpec {
        samples: 400,
        redundancy: 1,
        label_noise: 0.0,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec, 3).unwrap();
    let train: Vec<(Vec<String>, usize)> = ds
        .split(Split::Train)
        .map(|s| (s.tokens.clone(), s.label))
        .collect();
    assert_eq!(perceptron_train_accuracy(&train, 200), 1.0);
}

#[test]
fn classes_are_balanced() {
    let spec = SyntheticSpec {
        samples: 1000,
        ..SyntheticSpec::default()
    };
    for seed in 0..20 {
        let ds = generate_synthetic(&spec, seed).unwrap();
        let ones = ds.samples().iter().filter(|s| s.label == 1).count();
        assert!(ones.abs_diff(500) <= 50, "seed {seed}: {ones} positives");
    }
}

#[test]
fn label_noise_rate_is_close_to_spec() {
    let spec = SyntheticSpec {
        samples: 4000,
        label_noise: 0.1,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec, 8).unwrap();
    let flipped = ds
        .samples()
        .iter()
        .filter(|s| {
            !s.tokens
                .iter()
                .any(|t| t.starts_with(&format!("cue{}_", s.label)))
        })
        .count();
    let rate = flipped as f64 / 4000.0;
    assert!((rate - 0.1).abs() < 0.02, "{rate}");
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SyntheticSpec {
            redundancy: 0,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            label_noise: 0.5,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            min_len: 9,
            max_len: 8,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            redundancy: 9,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            train_fraction: 0.95,
            ..SyntheticSpec::default()
        },
    ];
    for spec in bad {
        assert!(generate_synthetic(&spec, 0).is_err(), "{spec:?}");
    }
}
