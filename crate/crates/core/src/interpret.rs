//! Per-token interpretations of a single prediction: attention weights,
//! normalized input-gradient saliency, and LIME surrogate coefficients.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Vocabulary;
use crate::linalg;
use crate::model::{argmax, Model};
use crate::{Error, Result, SeededRng};

/// Interpretation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Attention,
    Gradient,
    Lime,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Attention, Method::Gradient, Method::Lime];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::Gradient => "gradient",
            Method::Lime => "lime",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" => Some(Method::Attention),
            "gradient" => Some(Method::Gradient),
            "lime" => Some(Method::Lime),
            _ => None,
        }
    }
}

/// A probability vector over the tokens of one sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterpretationDistribution {
    probabilities: Vec<f64>,
}

impl InterpretationDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Wraps `probabilities`, which must be nonempty, nonnegative and sum to
    /// one within 1e-9.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Empty("interpretation distribution"));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "distribution entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Self { probabilities })
    }

    /// Normalizes nonnegative scores; `None` when they sum to zero.
    fn from_scores(scores: Vec<f64>) -> Option<Result<Self>> {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(Self::new(scores.into_iter().map(|s| s / total).collect()))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// Anything that scores classes for a token-id sequence. LIME only needs
/// this.
pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn class_scores(&self, ids: &[usize]) -> Result<Vec<f64>>;
}

/// The attention weights of the forward pass.
pub fn attention_interpretation(
    model: &Model,
    ids: &[usize],
) -> Result<InterpretationDistribution> {
    InterpretationDistribution::new(model.forward(ids)?.attention)
}

/// Per-token L1 norms of the gradient of the predicted-class probability
/// with respect to each token's embedding vector. The graph is
/// differentiated end to end, through the attention weights.
pub fn saliency_scores(model: &Model, ids: &[usize]) -> Result<Vec<f64>> {
    let trace = model.trace(ids)?;
    let probs = trace.graph.value(trace.probabilities)?.data();
    let mut seed = vec![0.0; probs.len()];
    seed[argmax(probs)] = 1.0;
    let seed = crate::Tensor::matrix(1, seed.len(), seed)?;
    let grads = trace.graph.backward(trace.probabilities, &seed)?;
    let g = grads
        .wrt(trace.embedded)
        .ok_or_else(|| Error::InvalidArgument("embedding gradient missing".into()))?;
    let width = g.shape()[1];
    Ok(g.data()
        .chunks(width)
        .map(|row| row.iter().map(|v| v.abs()).sum())
        .collect())
}

/// [`saliency_scores`] normalized to a distribution.
pub fn gradient_saliency(model: &Model, ids: &[usize]) -> Result<InterpretationDistribution> {
    normalize_saliency(saliency_scores(model, ids)?)
}

pub(crate) fn normalize_saliency(scores: Vec<f64>) -> Result<InterpretationDistribution> {
    InterpretationDistribution::from_scores(scores).unwrap_or(Err(Error::DegenerateGradient))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LimeConfig {
    pub num_perturbations: usize,
    /// Proximity kernel width: `exp(-(fraction masked)^2 / width^2)`.
    pub kernel_width: f64,
    /// Ridge penalty on the token coefficients (not the intercept).
    pub regularization: f64,
    pub top_fraction: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            num_perturbations: 1000,
            kernel_width: 0.25,
            regularization: 1e-3,
            top_fraction: 0.2,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_perturbations > 0
            && self.kernel_width > 0.0
            && self.regularization >= 0.0
            && self.top_fraction > 0.0
            && self.top_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid LIME config {self:?}"
            )))
        }
    }
}

/// Weighted ridge surrogate fitted around one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub target_class: usize,
    pub intercept: f64,
    /// One coefficient per token position.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimeExplanation {
    pub fit: LimeFit,
    /// `|coefficient| / sum |coefficient|`.
    pub distribution: InterpretationDistribution,
}

/// Draws the perturbation masks: the all-ones mask, then
/// `num_perturbations - 1` masks with independent fair-coin bits.
pub fn lime_masks(d: usize, cfg: &LimeConfig, rng: &mut SeededRng) -> Vec<Vec<bool>> {
    let mut masks = Vec::with_capacity(cfg.num_perturbations);
    masks.push(vec![true; d]);
    for _ in 1..cfg.num_perturbations {
        masks.push((0..d).map(|_| rng.coin()).collect());
    }
    masks
}

/// Fits the LIME surrogate without the degeneracy check of
/// [`lime_explain`]. Masked tokens are replaced by the padding id and the
/// regression target is the score of the class predicted on the intact
/// sample.
pub fn lime_fit<P: Predictor + ?Sized>(
    model: &P,
    ids: &[usize],
    cfg: &LimeConfig,
    rng: &mut SeededRng,
) -> Result<LimeFit> {
    cfg.validate()?;
    let d = ids.len();
    if d == 0 {
        return Err(Error::EmptySequence);
    }
    let masks = lime_masks(d, cfg, rng);

    let mut cache: BTreeMap<&[bool], Vec<f64>> = BTreeMap::new();
    let mut perturbed = vec![0usize; d];
    for mask in &masks {
        if cache.contains_key(mask.as_slice()) {
            continue;
        }
        for ((dst, &id), &keep) in perturbed.iter_mut().zip(ids).zip(mask) {
            *dst = if keep { id } else { Vocabulary::PAD };
        }
        cache.insert(mask.as_slice(), model.class_scores(&perturbed)?);
    }
    let target_class = argmax(&cache[masks[0].as_slice()]);

    // identical masks collapse into one row carrying their summed weight
    let width2 = cfg.kernel_width * cfg.kernel_width;
    let mut rows: BTreeMap<&[bool], f64> = BTreeMap::new();
    for mask in &masks {
        let masked = mask.iter().filter(|&&k| !k).count() as f64 / d as f64;
        *rows.entry(mask.as_slice()).or_default() += libm::exp(-(masked * masked) / width2);
    }
    let cols = d + 1;
    let mut design = Vec::with_capacity(rows.len() * cols);
    let mut targets = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    for (mask, w) in rows {
        design.push(1.0);
        design.extend(mask.iter().map(|&k| if k { 1.0 } else { 0.0 }));
        targets.push(cache[mask][target_class]);
        weights.push(w);
    }
    let mut penalty = vec![cfg.regularization; cols];
    penalty[0] = 0.0;
    let beta = linalg::weighted_ridge(&design, &targets, &weights, &penalty, cols)?;
    Ok(LimeFit {
        target_class,
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

/// LIME explanation of one prediction. Fails with
/// [`Error::DegenerateExplanation`] when every coefficient vanishes.
pub fn lime_explain<P: Predictor + ?Sized>(
    model: &P,
    ids: &[usize],
    cfg: &LimeConfig,
    rng: &mut SeededRng,
) -> Result<LimeExplanation> {
    let fit = lime_fit(model, ids, cfg, rng)?;
    let magnitudes: Vec<f64> = fit
        .coefficients
        .iter()
        .map(|c| if c.abs() > LIME_ZERO { c.abs() } else { 0.0 })
        .collect();
    let distribution = InterpretationDistribution::from_scores(magnitudes)
        .unwrap_or(Err(Error::DegenerateExplanation))?;
    Ok(LimeExplanation { fit, distribution })
}

/// Coefficients at or below this magnitude count as zero.
const LIME_ZERO: f64 = 1e-12;

/// The `ceil(fraction * d)` most probable indices (lower index first on
/// ties), returned in ascending index order.
pub fn top_fraction_indices(
    dist: &InterpretationDistribution,
    fraction: f64,
) -> Result<Vec<usize>> {
    let d = dist.len();
    let count = top_count(d, fraction)?;
    let p = dist.probabilities();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| p[j].total_cmp(&p[i]).then(i.cmp(&j)));
    let mut top = order[..count].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// `ceil(fraction * d)`; the product is nudged down by 1e-9 first so that
/// e.g. 0.7 * 10 counts as 7 rather than 8.
pub fn top_count(d: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top fraction {fraction} must be in (0, 1]"
        )));
    }
    let raw = libm::ceil(fraction * d as f64 - 1e-9);
    Ok((raw.max(1.0) as usize).min(d))
}
