//! First-order optimizers over flat parameter vectors, all with a constant
//! learning rate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adagrad,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "sgd_momentum" => Some(OptimizerKind::SgdMomentum),
            "adagrad" => Some(OptimizerKind::Adagrad),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    /// Default learning rate: 0.01 for SGD variants, 0.1 for Adagrad,
    /// 0.001 for Adam.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd | OptimizerKind::SgdMomentum => 0.01,
            OptimizerKind::Adagrad => 0.1,
            OptimizerKind::Adam => 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Denominator guard for Adagrad and Adam.
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            learning_rate: kind.default_learning_rate(),
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd).with_learning_rate(learning_rate)
    }

    pub fn sgd_momentum(learning_rate: f64, momentum: f64) -> Self {
        Self {
            momentum,
            ..Self::new(OptimizerKind::SgdMomentum).with_learning_rate(learning_rate)
        }
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adagrad).with_learning_rate(learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam).with_learning_rate(learning_rate)
    }

    pub fn with_learning_rate(self, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid optimizer config {self:?}"
            )))
        }
    }
}

/// Optimizer configuration plus per-parameter accumulators.
///
/// `first` holds the momentum buffer (SGD), the squared-gradient sum
/// (Adagrad) or the first moment (Adam); `second` holds Adam's second moment.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, parameter_count: usize) -> Result<Self> {
        config.validate()?;
        let second = match config.kind {
            OptimizerKind::Adam => vec![0.0; parameter_count],
            _ => Vec::new(),
        };
        Ok(Self {
            config,
            first: vec![0.0; parameter_count],
            second,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Clears every accumulator and the step count.
    pub fn reset(&mut self) {
        self.first.iter_mut().for_each(|v| *v = 0.0);
        self.second.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
    }

    /// Applies one update `W <- W - O(alpha, W)` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                left: self.first.len(),
                right: grads.len().min(params.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to optimizer".into()));
        }
        self.steps += 1;
        match self.config.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.config.learning_rate),
            OptimizerKind::SgdMomentum => momentum_step(
                params,
                grads,
                &mut self.first,
                self.config.learning_rate,
                self.config.momentum,
            ),
            OptimizerKind::Adagrad => adagrad_step(
                params,
                grads,
                &mut self.first,
                self.config.learning_rate,
                self.config.epsilon,
            ),
            OptimizerKind::Adam => adam_step(
                params,
                grads,
                &mut self.first,
                &mut self.second,
                self.steps,
                &self.config,
            ),
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (w, g) in params.iter_mut().zip(grads) {
        *w -= lr * g;
    }
}

// buffer <- beta * buffer + g; W <- W - lr * buffer
fn momentum_step(params: &mut [f64], grads: &[f64], buffer: &mut [f64], lr: f64, beta: f64) {
    for ((w, g), b) in params.iter_mut().zip(grads).zip(buffer.iter_mut()) {
        *b = beta * *b + g;
        *w -= lr * *b;
    }
}

fn adagrad_step(params: &mut [f64], grads: &[f64], accum: &mut [f64], lr: f64, eps: f64) {
    for ((w, g), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        *a += g * g;
        *w -= lr * g / (libm::sqrt(*a) + eps);
    }
}

fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &OptimizerConfig,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
    }
}
