//! Embedding -> CNN encoder -> attention -> linear head classifier.
//!
//! Parameters live in one flat vector whose layout (the canonical order used
//! by checkpoints, optimizers and the weight averager) is:
//!
//! 1. `embedding` `[V, E]`
//! 2. per kernel size `k`, in config order: `conv{k}.weight` `[k, E, F]`, `conv{k}.bias` `[F]`
//! 3. additive attention: `attn.w` `[H, H]`, `attn.b` `[H]`, `attn.v` `[H, 1]`;
//!    scaled dot-product attention: `attn.q` `[H, 1]`
//! 4. `out.w` `[H, C]`, `out.b` `[C]`
//!
//! where `H = F * kernel_sizes.len()` is the encoder width. The additive
//! attention projection is square (`H -> H`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::averaging::Objective;
use crate::data::EncodedSample;
use crate::graph::{ComputeGraph, NodeId};
use crate::interpret::Predictor;
use crate::{Error, Result, SeededRng, Tensor};

/// Floor applied to the true-class probability inside the loss.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AttentionKind {
    /// `s_t = v . tanh(W_a h_t + b_a)`
    Additive,
    /// `s_t = q . h_t / sqrt(H)`
    ScaledDot,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Additive => "additive",
            AttentionKind::ScaledDot => "scaled_dot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "additive" => Some(AttentionKind::Additive),
            "scaled_dot" => Some(AttentionKind::ScaledDot),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub attention: AttentionKind,
    pub num_classes: usize,
    /// Parameters are drawn from `[-init_scale, init_scale)`.
    pub init_scale: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 16-dim embeddings, 8 filters, kernels {1, 3},
    /// additive attention.
    pub fn new(vocab_size: usize, num_classes: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 16,
            conv_filters: 8,
            kernel_sizes: vec![1, 3],
            attention: AttentionKind::Additive,
            num_classes,
            init_scale: 0.1,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.conv_filters * self.kernel_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.conv_filters == 0 {
            return bad(format!(
                "vocab_size, embed_dim and conv_filters must be positive: {self:?}"
            ));
        }
        if self.kernel_sizes.is_empty() {
            return bad("kernel_sizes must be nonempty".into());
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("kernel size {k} must be odd and positive"));
        }
        let mut sorted = self.kernel_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernel_sizes.len() {
            return bad("kernel_sizes must be distinct".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return bad(format!(
                "init_scale must be finite and >= 0, got {}",
                self.init_scale
            ));
        }
        Ok(())
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Canonical parameter layout for `config`.
pub fn parameter_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let (e, f, h, c) = (
        config.embed_dim,
        config.conv_filters,
        config.hidden_dim(),
        config.num_classes,
    );
    let mut shapes: Vec<(String, Vec<usize>)> =
        vec![("embedding".into(), vec![config.vocab_size, e])];
    for &k in &config.kernel_sizes {
        shapes.push((format!("conv{k}.weight"), vec![k, e, f]));
        shapes.push((format!("conv{k}.bias"), vec![f]));
    }
    match config.attention {
        AttentionKind::Additive => {
            shapes.push(("attn.w".into(), vec![h, h]));
            shapes.push(("attn.b".into(), vec![h]));
            shapes.push(("attn.v".into(), vec![h, 1]));
        }
        AttentionKind::ScaledDot => shapes.push(("attn.q".into(), vec![h, 1])),
    }
    shapes.push(("out.w".into(), vec![h, c]));
    shapes.push(("out.b".into(), vec![c]));

    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let spec = ParamSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            spec
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Vec<ParamSpec>,
    params: Vec<f64>,
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub class_probabilities: Vec<f64>,
    /// Attention weights over the input tokens.
    pub attention: Vec<f64>,
    /// Encoder states `h_t`, shape `[T, H]`.
    pub encoder_states: Tensor,
}

impl ForwardOutput {
    /// Index of the most probable class (lowest index on ties).
    pub fn predicted_class(&self) -> usize {
        argmax(&self.class_probabilities)
    }
}

/// A forward pass kept alive for differentiation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub graph: ComputeGraph,
    pub embedded: NodeId,
    pub encoder: NodeId,
    pub attention: NodeId,
    pub probabilities: NodeId,
}

impl Trace {
    pub fn output(&self) -> Result<ForwardOutput> {
        Ok(ForwardOutput {
            class_probabilities: self.graph.value(self.probabilities)?.data().to_vec(),
            attention: self.graph.value(self.attention)?.data().to_vec(),
            encoder_states: self.graph.value(self.encoder)?.clone(),
        })
    }
}

impl Model {
    /// Draws every parameter uniformly from `[-init_scale, init_scale)`.
    pub fn build(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let count = layout.last().map_or(0, |p| p.offset + p.len());
        let s = config.init_scale;
        let params = if s == 0.0 {
            vec![0.0; count]
        } else {
            rng.uniform_vec(-s, s, count)?
        };
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_parameters(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let count = layout.last().map_or(0, |p| p.offset + p.len());
        if params.len() != count {
            return Err(Error::LengthMismatch {
                left: count,
                right: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// The named parameter's slice of the flat vector.
    pub fn parameter(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|p| p.name == name)
            .map(|p| &self.params[p.range()])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|p| p.name == name)?.range();
        Some(&mut self.params[range])
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Builds and evaluates the graph for one token sequence.
    pub fn trace(&self, ids: &[usize]) -> Result<Trace> {
        self.check_tokens(ids)?;
        let cfg = &self.config;
        let mut g = ComputeGraph::new();
        let mut nodes = Vec::with_capacity(self.layout.len());
        for p in &self.layout {
            nodes.push(g.input(&p.name, &p.shape)?);
        }
        let param = |name: &str| -> NodeId {
            let idx = self.layout.iter().position(|p| p.name == name).unwrap();
            nodes[idx]
        };

        let embedded = g.gather(param("embedding"), ids)?;
        let mut features = Vec::with_capacity(cfg.kernel_sizes.len());
        for &k in &cfg.kernel_sizes {
            let conv = g.conv1d(
                embedded,
                param(&format!("conv{k}.weight")),
                param(&format!("conv{k}.bias")),
            )?;
            features.push(g.tanh(conv)?);
        }
        let encoder = if features.len() == 1 {
            features[0]
        } else {
            g.concat(&features)?
        };

        let h = cfg.hidden_dim();
        let scores = match cfg.attention {
            AttentionKind::Additive => {
                let proj = g.matmul(encoder, param("attn.w"))?;
                let proj = g.add(proj, param("attn.b"))?;
                let act = g.tanh(proj)?;
                g.matmul(act, param("attn.v"))?
            }
            AttentionKind::ScaledDot => {
                let raw = g.matmul(encoder, param("attn.q"))?;
                g.scale(raw, 1.0 / libm::sqrt(h as f64))?
            }
        };
        let scores = g.reshape(scores, &[1, ids.len()])?;
        let attention = g.softmax(scores)?;
        let context = g.matmul(attention, encoder)?;
        let logits = g.matmul(context, param("out.w"))?;
        let logits = g.add(logits, param("out.b"))?;
        let probabilities = g.softmax(logits)?;

        let tensors: Vec<Tensor> = self
            .layout
            .iter()
            .map(|p| Tensor::from_parts_unchecked(p.shape.clone(), self.params[p.range()].to_vec()))
            .collect();
        let bindings: Vec<(&str, &Tensor)> = self
            .layout
            .iter()
            .zip(&tensors)
            .map(|(p, t)| (p.name.as_str(), t))
            .collect();
        g.forward_eval(&bindings)?;

        Ok(Trace {
            graph: g,
            embedded,
            encoder,
            attention,
            probabilities,
        })
    }

    pub fn forward(&self, ids: &[usize]) -> Result<ForwardOutput> {
        self.trace(ids)?.output()
    }

    /// Gradient of `seed . probabilities` with respect to every parameter,
    /// flattened in canonical order.
    pub fn probability_gradient(&self, trace: &Trace, seed: &[f64]) -> Result<Vec<f64>> {
        let seed = Tensor::matrix(1, self.config.num_classes, seed.to_vec())?;
        let grads = trace.graph.backward(trace.probabilities, &seed)?;
        let mut flat = vec![0.0; self.params.len()];
        for p in &self.layout {
            let g = grads
                .input(&p.name)
                .ok_or_else(|| Error::UnboundInput(p.name.clone()))?;
            flat[p.range()].copy_from_slice(g.data());
        }
        Ok(flat)
    }

    /// Cross-entropy loss of one sample and its gradient.
    pub fn loss_and_gradient(&self, ids: &[usize], label: usize) -> Result<(f64, Vec<f64>)> {
        self.check_label(label)?;
        let trace = self.trace(ids)?;
        let probs = trace.graph.value(trace.probabilities)?.data();
        let p = probs[label];
        let loss_value = -libm::log(p.max(PROBABILITY_FLOOR));
        let mut seed = vec![0.0; self.config.num_classes];
        if p > PROBABILITY_FLOOR {
            seed[label] = -1.0 / p;
        }
        let grad = self.probability_gradient(&trace, &seed)?;
        Ok((loss_value, grad))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.num_classes {
            return Err(Error::InvalidLabel {
                label,
                num_classes: self.config.num_classes,
            });
        }
        Ok(())
    }

    /// Fraction of `samples` whose predicted class equals the label.
    pub fn accuracy(&self, samples: &[EncodedSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let mut correct = 0usize;
        for s in samples {
            if self.forward(&s.ids)?.predicted_class() == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// `-ln(max(p_label, 1e-12))`.
pub fn loss(output: &ForwardOutput, label: usize) -> Result<f64> {
    let p = output
        .class_probabilities
        .get(label)
        .ok_or(Error::InvalidLabel {
            label,
            num_classes: output.class_probabilities.len(),
        })?;
    Ok(-libm::log(p.max(PROBABILITY_FLOOR)))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Objective for Model {
    type Example = EncodedSample;

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss_and_gradient(&self, batch: &[&EncodedSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for s in batch {
            let (l, g) = self.loss_and_gradient(&s.ids, s.label)?;
            total += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        Ok((total / n, grad))
    }

    fn accuracy(&self, examples: &[EncodedSample]) -> Result<f64> {
        Model::accuracy(self, examples)
    }
}

impl Predictor for Model {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn class_scores(&self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(ids)?.class_probabilities)
    }
}
