//! Forward pass of a pinned tiny classifier against values produced by an
//! independent numpy implementation of the same architecture.

use seedstab_core::interpret::attention_interpretation;
use seedstab_core::{Model, ModelConfig};

fn pinned() -> Model {
    let cfg = ModelConfig {
        embed_dim: 2,
        conv_filters: 1,
        kernel_sizes: vec![1, 3],
        ..ModelConfig::new(4, 2)
    };
    let params: Vec<f64> = (0..32).map(|i| ((i * 37) % 17 - 8) as f64 / 10.0).collect();
    Model::from_parameters(cfg, params).unwrap()
}

fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn two_token_forward_matches_scripted_evaluation() {
    let out = pinned().forward(&[2, 3]).unwrap();
    assert_close(
        &out.class_probabilities,
        &[0.18461708864595894, 0.8153829113540411],
    );
    assert_close(&out.attention, &[0.507208687009125, 0.4927913129908749]);
}

#[test]
fn three_token_forward_matches_scripted_evaluation() {
    let model = pinned();
    let out = model.forward(&[3, 1, 2]).unwrap();
    assert_close(
        &out.class_probabilities,
        &[0.21393159390007682, 0.7860684060999232],
    );
    let attention = attention_interpretation(&model, &[3, 1, 2]).unwrap();
    assert_close(
        attention.probabilities(),
        &[0.3296202918481427, 0.3310229693438512, 0.33935673880800604],
    );
}
