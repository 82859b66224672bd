mod common;

use common::{magnitude_order, LinearModel, FD_STEP, REL_FLOOR};
use proptest::prelude::*;
use seedstab_core::gradcheck::relative_error;
use seedstab_core::interpret::{
    attention_interpretation, gradient_saliency, lime_explain, lime_fit, lime_masks,
    saliency_scores, top_fraction_indices, LimeConfig, Predictor,
};
use seedstab_core::{Model, ModelConfig, SeededRng};

fn small_model(seed: u64, scale: f64) -> Model {
    let cfg = ModelConfig {
        embed_dim: 4,
        conv_filters: 3,
        kernel_sizes: vec![1, 3],
        init_scale: scale,
        ..ModelConfig::new(12, 2)
    };
    Model::build(cfg, &mut SeededRng::new(seed)).unwrap()
}

/// Weighted ridge over `[1, z]` solved by Gauss-Jordan elimination, written
/// independently of the library solver.
fn ridge_oracle(masks: &[Vec<bool>], y: &[f64], weights: &[f64], lambda: f64) -> Vec<f64> {
    let n = masks[0].len() + 1;
    let mut a = vec![vec![0.0; n + 1]; n];
    for ((mask, &yi), &w) in masks.iter().zip(y).zip(weights) {
        let mut x = vec![1.0];
        x.extend(mask.iter().map(|&k| if k { 1.0 } else { 0.0 }));
        for i in 0..n {
            for j in 0..n {
                a[i][j] += w * x[i] * x[j];
            }
            a[i][n] += w * x[i] * yi;
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let div = a[col][col];
        for v in a[col].iter_mut() {
            *v /= div;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                let src = a[col].clone();
                for (v, s) in a[row].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
    }
    a.iter().map(|r| r[n]).collect()
}

fn proximity(mask: &[bool], width: f64) -> f64 {
    let masked = mask.iter().filter(|k| !**k).count() as f64 / mask.len() as f64;
    (-(masked * masked) / (width * width)).exp()
}

#[test]
fn linear_model_coefficients_are_recovered() {
    let model = LinearModel {
        intercept: 0.1,
        weights: vec![2.0, -1.0],
    };
    let cfg = LimeConfig::default();
    let fit = lime_fit(&model, &[5, 7], &cfg, &mut SeededRng::new(8)).unwrap();
    assert_eq!(fit.target_class, 1);
    let truth = [2.0f64, -1.0];
    for (c, t) in fit.coefficients.iter().zip(truth) {
        assert_eq!(c.signum(), t.signum());
        assert!((c - t).abs() <= 0.1 * t.abs(), "{c} vs {t}");
    }
    assert_eq!(magnitude_order(&fit.coefficients), magnitude_order(&truth));
}

#[test]
fn fit_matches_scripted_ridge_on_the_same_masks() {
    let model = small_model(21, 0.8);
    let ids = [3, 9, 4, 4, 11];
    for lambda in [0.0, 1e-3, 0.5] {
        let cfg = LimeConfig {
            regularization: lambda,
            num_perturbations: 300,
            ..LimeConfig::default()
        };
        let fit = lime_fit(&model, &ids, &cfg, &mut SeededRng::new(2)).unwrap();
        let masks = lime_masks(ids.len(), &cfg, &mut SeededRng::new(2));
        let y: Vec<f64> = masks
            .iter()
            .map(|m| {
                let perturbed: Vec<usize> = ids
                    .iter()
                    .zip(m)
                    .map(|(&id, &k)| if k { id } else { 0 })
                    .collect();
                model.class_scores(&perturbed).unwrap()[fit.target_class]
            })
            .collect();
        let w: Vec<f64> = masks
            .iter()
            .map(|m| proximity(m, cfg.kernel_width))
            .collect();
        let beta = ridge_oracle(&masks, &y, &w, lambda);
        assert!((fit.intercept - beta[0]).abs() < 1e-9);
        for (c, b) in fit.coefficients.iter().zip(&beta[1..]) {
            assert!((c - b).abs() < 1e-9, "lambda {lambda}: {c} vs {b}");
        }
    }
}

#[test]
fn single_token_coefficient_is_the_masking_effect() {
    let model = small_model(5, 1.0);
    let cfg = LimeConfig {
        regularization: 0.0,
        ..LimeConfig::default()
    };
    let fit = lime_fit(&model, &[7], &cfg, &mut SeededRng::new(3)).unwrap();
    let present = model.class_scores(&[7]).unwrap()[fit.target_class];
    let masked = model.class_scores(&[0]).unwrap()[fit.target_class];
    let want = present - masked;
    assert!(
        (fit.coefficients[0] - want).abs() < 1e-9,
        "{} vs {want}",
        fit.coefficients[0]
    );
}

#[test]
fn lime_is_deterministic_per_seed() {
    let model = small_model(9, 0.5);
    let cfg = LimeConfig::default();
    let a = lime_explain(&model, &[2, 3, 4], &cfg, &mut SeededRng::new(1)).unwrap();
    let b = lime_explain(&model, &[2, 3, 4], &cfg, &mut SeededRng::new(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saliency_scores_match_finite_differences() {
    let model = small_model(13, 0.9);
    let ids = [4, 8, 2, 10];
    let scores = saliency_scores(&model, &ids).unwrap();
    let base = model.forward(&ids).unwrap();
    let class = base.predicted_class();
    let embed = model.config().embed_dim;
    for (t, &id) in ids.iter().enumerate() {
        let mut numeric = 0.0;
        for e in 0..embed {
            let probe = |delta: f64| {
                let mut m = model.clone();
                m.parameter_mut("embedding").unwrap()[id * embed + e] += delta;
                m.forward(&ids).unwrap().class_probabilities[class]
            };
            numeric += ((probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP)).abs();
        }
        let e = relative_error(scores[t], numeric, REL_FLOOR);
        assert!(e < 1e-4, "token {t}: {} vs {numeric}", scores[t]);
    }
}

#[test]
fn saliency_degenerates_on_a_zero_model() {
    let model = small_model(1, 0.0);
    assert!(gradient_saliency(&model, &[2, 3]).is_err());
}

#[test]
fn pinned_example_top_fractions() {
    let uniform = seedstab_core::InterpretationDistribution::new(vec![0.2; 5]).unwrap();
    assert_eq!(top_fraction_indices(&uniform, 0.4).unwrap(), vec![0, 1]);
    let ten = seedstab_core::InterpretationDistribution::new(vec![0.1; 10]).unwrap();
    assert_eq!(top_fraction_indices(&ten, 0.2).unwrap().len(), 2);
    let seven = seedstab_core::InterpretationDistribution::new(vec![1.0 / 7.0; 7]).unwrap();
    assert_eq!(top_fraction_indices(&seven, 0.2).unwrap().len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn extractors_return_valid_distributions(
        seed in 0u64..1000,
        ids in prop::collection::vec(1usize..12, 1..9),
    ) {
        let model = small_model(seed, 0.6);
        let cfg = LimeConfig { num_perturbations: 200, ..LimeConfig::default() };
        let mut dists = vec![
            attention_interpretation(&model, &ids).unwrap(),
            gradient_saliency(&model, &ids).unwrap(),
        ];
        if let Ok(e) = lime_explain(&model, &ids, &cfg, &mut SeededRng::new(seed)) {
            dists.push(e.distribution);
        }
        for d in dists {
            prop_assert_eq!(d.len(), ids.len());
            prop_assert!(d.probabilities().iter().all(|p| *p >= 0.0));
            prop_assert!((d.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn top_fraction_size_is_ceil(
        raw in prop::collection::vec(0.01f64..1.0, 1..20),
        fraction in 0.01f64..=1.0,
    ) {
        let total: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let drift = 1.0 - p.iter().sum::<f64>();
        p[0] += drift;
        let d = p.len();
        let dist = seedstab_core::InterpretationDistribution::new(p).unwrap();
        let top = top_fraction_indices(&dist, fraction).unwrap();
        let want = ((fraction * d as f64 - 1e-9).ceil() as usize).clamp(1, d);
        prop_assert_eq!(top.len(), want);
        prop_assert_eq!(top_fraction_indices(&dist, 1.0).unwrap(), (0..d).collect::<Vec<_>>());
    }
}
