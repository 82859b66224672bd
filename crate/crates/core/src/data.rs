//! Samples, vocabulary and the redundant-cue synthetic corpus.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub split: Split,
}

/// A sample mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub id: String,
    pub ids: Vec<usize>,
    pub label: usize,
}

/// Token-to-id map. Id 0 is padding, id 1 the unknown token; training
/// tokens follow in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const PAD_TOKEN: &'static str = "<pad>";
    pub const UNK_TOKEN: &'static str = "<unk>";

    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            ids: BTreeMap::new(),
        };
        v.insert(Self::PAD_TOKEN);
        v.insert(Self::UNK_TOKEN);
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or [`Self::UNK`] when unseen.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    vocab: Vocabulary,
    num_classes: usize,
}

impl Dataset {
    /// Validates `samples` and builds the vocabulary from the training
    /// split. `num_classes` defaults to `max(label) + 1` (at least 2).
    pub fn new(samples: Vec<Sample>, num_classes: Option<usize>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.tokens.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` has no tokens",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sample id `{}`",
                    s.id
                )));
            }
        }
        let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or((max_label + 1).max(2));
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::InvalidLabel {
                label: s.label,
                num_classes,
            });
        }
        if !samples.iter().any(|s| s.split == Split::Train) {
            return Err(Error::Empty("train split"));
        }
        let mut vocab = Vocabulary::new();
        for s in samples.iter().filter(|s| s.split == Split::Train) {
            for t in &s.tokens {
                vocab.insert(t);
            }
        }
        Ok(Self {
            samples,
            vocab,
            num_classes,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn encode(&self, sample: &Sample) -> EncodedSample {
        EncodedSample {
            id: sample.id.clone(),
            ids: sample.tokens.iter().map(|t| self.vocab.id(t)).collect(),
            label: sample.label,
        }
    }

    pub fn encoded(&self, split: Split) -> Vec<EncodedSample> {
        self.split(split).map(|s| self.encode(s)).collect()
    }
}

/// Parameters of the redundant-cue synthetic task.
///
/// Every sample belongs to a class and carries `redundancy` cue tokens of
/// that class (drawn from `cues_per_class` interchangeable cue words) at
/// random positions among filler words. Its label is the cue class, replaced
/// by a different class with probability `label_noise`. With redundancy
/// above one, a model can reach the same prediction by attending to any of
/// several cues.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticSpec {
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub redundancy: usize,
    pub label_noise: f64,
    pub num_classes: usize,
    pub cues_per_class: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            samples: 1250,
            min_len: 8,
            max_len: 16,
            redundancy: 3,
            label_noise: 0.05,
            num_classes: 2,
            cues_per_class: 4,
            train_fraction: 0.8,
            validation_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size == 0 || self.samples == 0 || self.cues_per_class == 0 {
            return bad("vocab_size, samples and cues_per_class must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!(
                "length range [{}, {}] is invalid",
                self.min_len, self.max_len
            ));
        }
        if self.redundancy == 0 || self.redundancy > self.min_len {
            return bad(format!(
                "redundancy {} must be in [1, min_len = {}]",
                self.redundancy, self.min_len
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!(
                "label_noise {} must be in [0, 0.5)",
                self.label_noise
            ));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        let fracs_ok = (0.0..=1.0).contains(&self.train_fraction)
            && (0.0..=1.0).contains(&self.validation_fraction)
            && self.train_fraction + self.validation_fraction <= 1.0 + 1e-12;
        if !fracs_ok {
            return bad("split fractions must lie in [0, 1] and sum to at most 1".into());
        }
        Ok(())
    }

    /// Number of training samples implied by the split fractions.
    pub fn train_count(&self) -> usize {
        (self.train_fraction * self.samples as f64 + 1e-9) as usize
    }

    fn validation_count(&self) -> usize {
        let v = (self.validation_fraction * self.samples as f64 + 1e-9) as usize;
        v.min(self.samples - self.train_count())
    }

    pub fn cue_token(class: usize, index: usize) -> String {
        format!("cue{class}_{index}")
    }

    pub fn filler_token(index: usize) -> String {
        format!("w{index}")
    }
}

/// Draws a synthetic dataset. Deterministic in `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed);
    let n_train = spec.train_count();
    let n_val = spec.validation_count();
    let mut samples = Vec::with_capacity(spec.samples);
    for j in 0..spec.samples {
        let class = rng.below(spec.num_classes);
        let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| SyntheticSpec::filler_token(rng.below(spec.vocab_size)))
            .collect();
        let mut positions: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut positions);
        for &p in &positions[..spec.redundancy] {
            tokens[p] = SyntheticSpec::cue_token(class, rng.below(spec.cues_per_class));
        }
        let label = if rng.bernoulli(spec.label_noise) {
            let other = rng.below(spec.num_classes - 1);
            if other >= class {
                other + 1
            } else {
                other
            }
        } else {
            class
        };
        let split = if j < n_train {
            Split::Train
        } else if j < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        samples.push(Sample {
            id: format!("s{j:05}"),
            tokens,
            label,
            split,
        });
    }
    Dataset::new(samples, Some(spec.num_classes))
}
