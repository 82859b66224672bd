//! Run configuration: a flat TOML file, one key per setting.
//!
//! ```toml
//! # model
//! embed_dim = 32
//! conv_filters = 32
//! kernel_sizes = [1, 3]
//! attention = "additive"        # or "scaled_dot"
//! init_scale = 0.1
//!
//! # optimization
//! optimizer = "adam"            # sgd | sgd_momentum | adagrad | adam
//! learning_rate = 0.001         # omitted: the optimizer's default
//! averaging = "naswa"           # off | aswa | naswa
//! epochs = 20
//! batch_size = 32
//! patience = 5                  # omitted: no early stop, best epoch still selected
//!
//! # seeds and data
//! seeds = [0, 1, 2]
//! dataset = "data.jsonl"        # omitted: synthetic task from the synth_* keys
//! synth_samples = 1250
//! data_seed = 0
//!
//! # interpretation
//! methods = ["attention", "gradient", "lime"]
//! top_fraction = 0.2
//! lime_perturbations = 1000
//! ```
//!
//! Unknown keys are rejected. Relative dataset paths resolve against the
//! directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seedstab_core::stability::{EntropyAggregation, ObservationConfig, ReportOptions};
use seedstab_core::{
    AttentionKind, AveragingMode, LimeConfig, Method, ModelConfig, OptimizerConfig, OptimizerKind,
    SyntheticSpec, TrainConfig,
};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub attention: AttentionKind,
    pub init_scale: f64,

    pub optimizer: OptimizerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub averaging: AveragingMode,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    pub reset_optimizer_on_assign: bool,

    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub data_seed: u64,
    pub synth_vocab_size: usize,
    pub synth_samples: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
    pub synth_redundancy: usize,
    pub synth_label_noise: f64,
    pub synth_num_classes: usize,
    pub synth_cues_per_class: usize,
    pub synth_train_fraction: f64,
    pub synth_validation_fraction: f64,

    pub methods: Vec<Method>,
    pub top_fraction: f64,
    pub entropy_aggregation: EntropyAggregation,
    pub lime_perturbations: usize,
    pub lime_kernel_width: f64,
    pub lime_regularization: f64,
    pub lime_seed: u64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        // wider than the core defaults: with Adam at 0.001 the averaged
        // runs otherwise stay close to chance after 20 epochs
        let model = ModelConfig {
            embed_dim: 32,
            conv_filters: 32,
            ..ModelConfig::new(1, 2)
        };
        let opt = OptimizerConfig::adam(0.001);
        let synth = SyntheticSpec::default();
        let lime = LimeConfig::default();
        Self {
            embed_dim: model.embed_dim,
            conv_filters: model.conv_filters,
            kernel_sizes: model.kernel_sizes,
            attention: model.attention,
            init_scale: model.init_scale,
            optimizer: opt.kind,
            learning_rate: None,
            momentum: opt.momentum,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
            averaging: AveragingMode::Off,
            epochs: 20,
            batch_size: 32,
            patience: None,
            reset_optimizer_on_assign: false,
            seeds: (0..10).collect(),
            dataset: None,
            data_seed: 0,
            synth_vocab_size: synth.vocab_size,
            synth_samples: synth.samples,
            synth_min_len: synth.min_len,
            synth_max_len: synth.max_len,
            synth_redundancy: synth.redundancy,
            synth_label_noise: synth.label_noise,
            synth_num_classes: synth.num_classes,
            synth_cues_per_class: synth.cues_per_class,
            synth_train_fraction: synth.train_fraction,
            synth_validation_fraction: synth.validation_fraction,
            methods: Method::ALL.to_vec(),
            top_fraction: lime.top_fraction,
            entropy_aggregation: EntropyAggregation::PairwiseMean,
            lime_perturbations: lime.num_perturbations,
            lime_kernel_width: lime.kernel_width,
            lime_regularization: lime.regularization,
            lime_seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(message) => HarnessError::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })?;
        if let Some(ds) = &cfg.dataset {
            if ds.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                let joined = base.join(ds);
                cfg.dataset = Some(std::fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return fail(format!("seed {dup} is listed twice"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("at least one interpretation method is required".into());
        }
        self.optimizer_config().validate()?;
        self.lime_config().validate()?;
        if self.dataset.is_none() {
            self.synthetic_spec().validate()?;
        }
        // vocabulary and class count are data-dependent; placeholders suffice
        self.model_config(2, 2).validate()?;
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self
                .learning_rate
                .unwrap_or_else(|| self.optimizer.default_learning_rate()),
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer_config(),
            averaging: self.averaging,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            reset_optimizer_on_assign: self.reset_optimizer_on_assign,
        }
    }

    pub fn model_config(&self, vocab_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            conv_filters: self.conv_filters,
            kernel_sizes: self.kernel_sizes.clone(),
            attention: self.attention,
            num_classes,
            init_scale: self.init_scale,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            vocab_size: self.synth_vocab_size,
            samples: self.synth_samples,
            min_len: self.synth_min_len,
            max_len: self.synth_max_len,
            redundancy: self.synth_redundancy,
            label_noise: self.synth_label_noise,
            num_classes: self.synth_num_classes,
            cues_per_class: self.synth_cues_per_class,
            train_fraction: self.synth_train_fraction,
            validation_fraction: self.synth_validation_fraction,
        }
    }

    pub fn lime_config(&self) -> LimeConfig {
        LimeConfig {
            num_perturbations: self.lime_perturbations,
            kernel_width: self.lime_kernel_width,
            regularization: self.lime_regularization,
            top_fraction: self.top_fraction,
        }
    }

    pub fn observation_config(&self) -> ObservationConfig {
        ObservationConfig {
            lime: self.lime_config(),
            lime_seed: self.lime_seed,
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            top_fraction: self.top_fraction,
            aggregation: self.entropy_aggregation,
        }
    }

    /// SHA-256 of the canonical serialization, ignoring where outputs go
    /// and where the dataset file lives (its content is fingerprinted
    /// separately).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.dataset = None;
        sha256_hex(c.to_toml().as_bytes())
    }

    /// Like [`Self::hash`], additionally ignoring the averaging mode and
    /// the seed list: equal for runs that may be compared side by side.
    pub fn comparison_hash(&self) -> String {
        let mut c = self.clone();
        c.averaging = AveragingMode::Off;
        c.seeds = vec![0];
        c.hash()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses `"1,2,3"` or `"range:a..b"` (half-open) into a duplicate-free
/// seed list.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = |m: String| HarnessError::Config(m);
    let seeds: Vec<u64> = if let Some(range) = spec.strip_prefix("range:") {
        let (a, b) = range
            .split_once("..")
            .ok_or_else(|| bad(format!("seed range {range:?} is not of the form a..b")))?;
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad range start {a:?}")))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad range end {b:?}")))?;
        (a..b).collect()
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| bad(format!("seed {s:?} is not an unsigned integer")))
            })
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad(format!("seed list {spec:?} is empty")));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(bad(format!("seed {dup} is listed twice")));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_duplicates() {
        assert!(RunConfig::parse("epoch = 3").is_err());
        assert!(RunConfig::parse("seeds = [7, 7]").is_err());
        assert!(RunConfig::parse("seeds = []").is_err());
        assert!(RunConfig::parse("epochs = 0").is_err());
        assert!(RunConfig::parse("kernel_sizes = [2]").is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("range:3..6").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("7,7").is_err());
        assert!(parse_seeds("range:4..4").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn comparison_hash_ignores_mode_and_seeds() {
        let a = RunConfig::default();
        let b = RunConfig {
            averaging: AveragingMode::Naswa,
            seeds: vec![5, 6],
            ..a.clone()
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.comparison_hash(), b.comparison_hash());
        let c = RunConfig {
            epochs: 3,
            ..a.clone()
        };
        assert_ne!(a.comparison_hash(), c.comparison_hash());
    }

    #[test]
    fn learning_rate_defaults_per_optimizer() {
        let cfg = RunConfig::parse("optimizer = \"adagrad\"").unwrap();
        assert_eq!(cfg.optimizer_config().learning_rate, 0.1);
        let cfg = RunConfig::parse("learning_rate = 0.5").unwrap();
        assert_eq!(cfg.optimizer_config().learning_rate, 0.5);
    }
}
