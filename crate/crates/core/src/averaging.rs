//! Aggressive stochastic weight averaging (ASWA) and its norm-filtered
//! variant (NASWA), wrapped around any optimizer inside the training loop.
//!
//! Per iteration `i` (1-based) of epoch `e` with `n` iterations per epoch,
//! the averager reads the current weights `W` *before* that iteration's
//! optimizer step and folds them into the running average:
//!
//! ```text
//! W_swa <- W_swa + (W - W_swa) / (e*n + i + 1)
//! ```
//!
//! At every epoch end the model weights are replaced by `W_swa`; the average
//! itself and the divisor's global index keep running across epochs.
//!
//! NASWA only folds `W` in when `||W - W_swa||_1` exceeds the mean of the
//! norm list `N_s`; the list is then reset to the current norm. Otherwise the
//! norm is appended and `W_swa` is left alone. Skipped iterations still
//! advance the global index used by the divisor.
//!
//! `W_swa` starts at the initial weights and `N_s` at `[0.0]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::optim::OptimizerState;
use crate::{Error, OptimizerConfig, Result, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AveragingMode {
    Off,
    Aswa,
    Naswa,
}

impl AveragingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AveragingMode::Off => "off",
            AveragingMode::Aswa => "aswa",
            AveragingMode::Naswa => "naswa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" | "plain" | "none" => Some(AveragingMode::Off),
            "aswa" => Some(AveragingMode::Aswa),
            "naswa" => Some(AveragingMode::Naswa),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragerState {
    mode: AveragingMode,
    averaged: Vec<f64>,
    epoch: usize,
    epochs: usize,
    iteration: usize,
    iters_per_epoch: usize,
    norms: Vec<f64>,
    updates: usize,
}

impl AveragerState {
    pub fn new(
        mode: AveragingMode,
        initial: &[f64],
        iters_per_epoch: usize,
        epochs: usize,
    ) -> Result<Self> {
        if initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial weights".into()));
        }
        if iters_per_epoch == 0 || epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "iterations per epoch ({iters_per_epoch}) and epochs ({epochs}) must be positive"
            )));
        }
        let norms = match mode {
            AveragingMode::Naswa => vec![0.0],
            _ => Vec::new(),
        };
        Ok(Self {
            mode,
            averaged: initial.to_vec(),
            epoch: 0,
            epochs,
            iteration: 0,
            iters_per_epoch,
            norms,
            updates: 0,
        })
    }

    pub fn mode(&self) -> AveragingMode {
        self.mode
    }

    /// The running average `W_swa`.
    pub fn averaged(&self) -> &[f64] {
        &self.averaged
    }

    /// NASWA norm list `N_s` (empty in other modes).
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Iterations completed in the current epoch.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Number of iterations at which `W_swa` was actually updated.
    pub fn update_count(&self) -> usize {
        self.updates
    }

    /// Advances to the next iteration and folds `weights` into the average
    /// according to the mode. Returns whether `W_swa` was updated. A no-op
    /// in [`AveragingMode::Off`].
    pub fn update(&mut self, weights: &[f64]) -> Result<bool> {
        if self.mode == AveragingMode::Off {
            return Ok(false);
        }
        if weights.len() != self.averaged.len() {
            return Err(Error::LengthMismatch {
                left: self.averaged.len(),
                right: weights.len(),
            });
        }
        if self.epoch >= self.epochs {
            return Err(Error::InvalidArgument(format!(
                "all {} epochs already completed",
                self.epochs
            )));
        }
        if self.iteration >= self.iters_per_epoch {
            return Err(Error::InvalidArgument(format!(
                "epoch {} already ran its {} iterations",
                self.epoch, self.iters_per_epoch
            )));
        }
        self.iteration += 1;
        let divisor = self.divisor()?;
        let applied = match self.mode {
            AveragingMode::Aswa => {
                self.aswa_update(weights, divisor);
                true
            }
            AveragingMode::Naswa => self.naswa_update(weights, divisor),
            AveragingMode::Off => unreachable!(),
        };
        if applied {
            self.updates += 1;
        }
        Ok(applied)
    }

    fn divisor(&self) -> Result<f64> {
        self.epoch
            .checked_mul(self.iters_per_epoch)
            .and_then(|t| t.checked_add(self.iteration + 1))
            .map(|d| d as f64)
            .ok_or_else(|| Error::InvalidArgument("averaging divisor overflow".into()))
    }

    fn aswa_update(&mut self, weights: &[f64], divisor: f64) {
        for (avg, w) in self.averaged.iter_mut().zip(weights) {
            *avg += (w - *avg) / divisor;
        }
    }

    fn naswa_update(&mut self, weights: &[f64], divisor: f64) -> bool {
        let current: f64 = weights
            .iter()
            .zip(&self.averaged)
            .map(|(w, a)| (w - a).abs())
            .sum();
        let mean = self.norms.iter().sum::<f64>() / self.norms.len() as f64;
        if current > mean {
            self.aswa_update(weights, divisor);
            self.norms.clear();
            self.norms.push(current);
            true
        } else {
            self.norms.push(current);
            false
        }
    }

    /// Epoch end: overwrites `params` with `W_swa` (left untouched in
    /// [`AveragingMode::Off`]) and moves to the next epoch.
    pub fn end_epoch(&mut self, params: &mut [f64]) -> Result<()> {
        if self.mode == AveragingMode::Off {
            return Ok(());
        }
        if params.len() != self.averaged.len() {
            return Err(Error::LengthMismatch {
                left: self.averaged.len(),
                right: params.len(),
            });
        }
        if self.iteration != self.iters_per_epoch {
            return Err(Error::InvalidArgument(format!(
                "epoch {} ended after {} of {} iterations",
                self.epoch, self.iteration, self.iters_per_epoch
            )));
        }
        params.copy_from_slice(&self.averaged);
        self.epoch += 1;
        self.iteration = 0;
        Ok(())
    }
}

/// A model trainable by [`train_with_averaging`]: a flat parameter vector
/// plus a mini-batch loss gradient.
pub trait Objective {
    type Example;

    fn parameters(&self) -> &[f64];
    fn parameters_mut(&mut self) -> &mut [f64];
    /// Mean loss over `batch` and its gradient with respect to
    /// [`Self::parameters`].
    fn batch_loss_and_gradient(&self, batch: &[&Self::Example]) -> Result<(f64, Vec<f64>)>;
    fn accuracy(&self, examples: &[Self::Example]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub averaging: AveragingMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation-accuracy
    /// improvement. `None` runs every epoch.
    pub patience: Option<usize>,
    /// Reset optimizer accumulators whenever `W_swa` is assigned to the
    /// model. Off by default.
    pub reset_optimizer_on_assign: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(0.001),
            averaging: AveragingMode::Off,
            epochs: 20,
            batch_size: 32,
            patience: None,
            reset_optimizer_on_assign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_accuracy: Option<f64>,
    /// L1 norm of `W_swa` at epoch end (of the plain weights when averaging
    /// is off).
    pub averaged_l1_norm: f64,
    pub averaging_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOutcome {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose weights the model ends with: the latest epoch reaching
    /// the best validation accuracy, or the last epoch when there is no
    /// validation set.
    pub selected_epoch: usize,
    pub stopped_early: bool,
}

/// Mini-batch training with per-batch weight averaging and per-epoch
/// assignment of the average, followed by early-stopping model selection on
/// validation accuracy.
///
/// Each epoch shuffles the training order with `rng`, then for every batch:
/// averager update on the current weights, gradient, optimizer step. The
/// last short batch counts as one iteration.
pub fn train_with_averaging<M: Objective>(
    model: &mut M,
    train: &[M::Example],
    validation: &[M::Example],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let iters_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut optimizer = OptimizerState::new(cfg.optimizer, model.parameters().len())?;
    let mut averager = AveragerState::new(
        cfg.averaging,
        model.parameters(),
        iters_per_epoch,
        cfg.epochs,
    )?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let updates_before = averager.update_count();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Example> = chunk.iter().map(|&i| &train[i]).collect();
            averager.update(model.parameters())?;
            let (loss, grad) = model
                .batch_loss_and_gradient(&batch)
                .map_err(|e| diverged(step, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite loss".into(),
                });
            }
            optimizer
                .step(model.parameters_mut(), &grad)
                .map_err(|e| diverged(step, e))?;
            loss_sum += loss;
            step += 1;
        }
        averager.end_epoch(model.parameters_mut())?;
        if cfg.reset_optimizer_on_assign && cfg.averaging != AveragingMode::Off {
            optimizer.reset();
        }

        let validation_accuracy = if validation.is_empty() {
            None
        } else {
            Some(model.accuracy(validation)?)
        };
        let l1_source = match cfg.averaging {
            AveragingMode::Off => model.parameters(),
            _ => averager.averaged(),
        };
        metrics.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / iters_per_epoch as f64,
            validation_accuracy,
            averaged_l1_norm: l1_source.iter().map(|v| v.abs()).sum(),
            averaging_updates: averager.update_count() - updates_before,
        });

        if let Some(acc) = validation_accuracy {
            // ties move the selection forward but do not reset patience
            let improved = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
            if improved || best.as_ref().is_some_and(|(b, _, _)| acc == *b) {
                best = Some((acc, epoch, model.parameters().to_vec()));
            }
            if improved {
                since_best = 0;
            } else {
                since_best += 1;
            }
            if cfg.patience.is_some_and(|p| since_best >= p) && epoch + 1 < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let selected_epoch = match best {
        Some((_, epoch, params)) => {
            model.parameters_mut().copy_from_slice(&params);
            epoch
        }
        None => metrics.len() - 1,
    };
    Ok(TrainOutcome {
        epochs: metrics,
        selected_epoch,
        stopped_early,
    })
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { step, detail },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn init_examples() {
        let s = AveragerState::new(AveragingMode::Aswa, &[4.0], 2, 3).unwrap();
        assert_eq!(s.averaged(), &[4.0]);
        let s = AveragerState::new(AveragingMode::Naswa, &[4.0], 2, 3).unwrap();
        assert_eq!(s.norms(), &[0.0]);
        let mut s = AveragerState::new(AveragingMode::Off, &[4.0], 2, 3).unwrap();
        assert!(!s.update(&[10.0]).unwrap());
        let mut w = [7.0];
        s.end_epoch(&mut w).unwrap();
        assert_eq!(w, [7.0]);
    }

    #[test]
    fn hand_trace_two_iterations() {
        let mut s = AveragerState::new(AveragingMode::Aswa, &[4.0], 2, 2).unwrap();
        s.update(&[4.0]).unwrap();
        assert_eq!(s.averaged(), &[4.0]);
        // the optimizer moved W to 3
        s.update(&[3.0]).unwrap();
        assert_relative_eq!(s.averaged()[0], 11.0 / 3.0, epsilon = 1e-15);
        let mut w = [3.0];
        s.end_epoch(&mut w).unwrap();
        assert_relative_eq!(w[0], 11.0 / 3.0, epsilon = 1e-15);
        // W_swa is not reset
        assert_relative_eq!(s.averaged()[0], 11.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn divisor_uses_global_index() {
        let mut s = AveragerState::new(AveragingMode::Aswa, &[0.0], 2, 3).unwrap();
        s.update(&[0.0]).unwrap();
        s.update(&[0.0]).unwrap();
        s.end_epoch(&mut [0.0]).unwrap();
        s.iteration = 1;
        assert_eq!(s.divisor().unwrap(), 4.0);
        // W = 4 against W_swa = 0 at divisor 4 moves the average to 1
        s.iteration = 0;
        s.update(&[4.0]).unwrap();
        assert_eq!(s.averaged(), &[1.0]);
    }

    #[test]
    fn naswa_branches() {
        let mut s = AveragerState::new(AveragingMode::Naswa, &[0.0], 10, 1).unwrap();
        s.norms = vec![2.0];
        assert!(s.update(&[3.0]).unwrap());
        assert_eq!(s.norms(), &[3.0]);

        let mut s = AveragerState::new(AveragingMode::Naswa, &[0.0], 10, 1).unwrap();
        s.norms = vec![2.0];
        assert!(!s.update(&[-1.0]).unwrap());
        assert_eq!(s.norms(), &[2.0, 1.0]);
        assert_eq!(s.averaged(), &[0.0]);
    }

    #[test]
    fn naswa_never_fires_on_constant_weights() {
        let mut s = AveragerState::new(AveragingMode::Naswa, &[1.5, -2.0], 3, 2).unwrap();
        let mut w = [1.5, -2.0];
        for _ in 0..2 {
            for _ in 0..3 {
                assert!(!s.update(&w).unwrap());
            }
            s.end_epoch(&mut w).unwrap();
        }
        assert_eq!(s.update_count(), 0);
        assert_eq!(w, [1.5, -2.0]);
    }

    #[test]
    fn iteration_and_epoch_bounds() {
        let mut s = AveragerState::new(AveragingMode::Aswa, &[0.0], 1, 1).unwrap();
        assert!(s.end_epoch(&mut [0.0]).is_err());
        s.update(&[0.0]).unwrap();
        assert!(s.update(&[0.0]).is_err());
        s.end_epoch(&mut [0.0]).unwrap();
        assert!(s.update(&[0.0]).is_err());
        assert!(s.update(&[0.0, 1.0]).is_err());
    }

    /// f(w) = 0.5 * sum (w - target)^2 over examples, one scalar weight.
    struct Quadratic {
        w: Vec<f64>,
    }

    impl Objective for Quadratic {
        type Example = f64;
        fn parameters(&self) -> &[f64] {
            &self.w
        }
        fn parameters_mut(&mut self) -> &mut [f64] {
            &mut self.w
        }
        fn batch_loss_and_gradient(&self, batch: &[&f64]) -> Result<(f64, Vec<f64>)> {
            let n = batch.len() as f64;
            let loss = batch
                .iter()
                .map(|t| 0.5 * (self.w[0] - **t).powi(2))
                .sum::<f64>()
                / n;
            let grad = batch.iter().map(|t| self.w[0] - **t).sum::<f64>() / n;
            Ok((loss, vec![grad]))
        }
        fn accuracy(&self, examples: &[f64]) -> Result<f64> {
            let hits = examples
                .iter()
                .filter(|t| (self.w[0] - **t).abs() < 0.5)
                .count();
            Ok(hits as f64 / examples.len() as f64)
        }
    }

    #[test]
    fn zero_gradient_epochs_keep_weights() {
        let mut m = Quadratic { w: vec![2.0] };
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::sgd(0.1),
            averaging: AveragingMode::Aswa,
            epochs: 2,
            batch_size: 1,
            ..TrainConfig::default()
        };
        train_with_averaging(&mut m, &[2.0, 2.0], &[], &cfg, &mut SeededRng::new(0)).unwrap();
        assert_eq!(m.w, vec![2.0]);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut m = Quadratic { w: vec![0.0] };
        assert!(matches!(
            train_with_averaging(
                &mut m,
                &[],
                &[],
                &TrainConfig::default(),
                &mut SeededRng::new(0)
            ),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn early_stopping_respects_epoch_budget() {
        let mut m = Quadratic { w: vec![0.0] };
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::sgd(0.01),
            epochs: 6,
            batch_size: 2,
            patience: Some(2),
            ..TrainConfig::default()
        };
        let out = train_with_averaging(
            &mut m,
            &[5.0, 5.0, 5.0],
            &[100.0],
            &cfg,
            &mut SeededRng::new(3),
        )
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.epochs.len(), 3);
        // flat validation accuracy: the latest tied epoch is kept
        assert_eq!(out.selected_epoch, 2);
    }
}
