//! Two-parameter toy problem on `f(x, y) = x^4/4 - x^2/2 + y^2/2`, which
//! has a saddle at the origin and minima at `(±1, 0)`. Used to compare the
//! paths of plain and averaged SGD near the saddle.

use alloc::format;
use alloc::vec::Vec;

use crate::{AveragerState, AveragingMode, Error, OptimizerConfig, OptimizerState, Result};

/// Any coordinate norm beyond this counts as divergence.
pub const DIVERGENCE_RADIUS: f64 = 1e6;

pub fn surface_value(x: f64, y: f64) -> f64 {
    x * x * x * x / 4.0 - x * x / 2.0 + y * y / 2.0
}

pub fn surface_grad(x: f64, y: f64) -> (f64, f64) {
    (x * x * x - x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub f: f64,
}

impl SurfacePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            f: surface_value(x, y),
        }
    }

    pub fn norm(&self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    /// Euclidean distance to the nearer of the two minima.
    pub fn distance_to_minimum(&self) -> f64 {
        libm::hypot(self.x - 1.0, self.y).min(libm::hypot(self.x + 1.0, self.y))
    }
}

/// How a trajectory point came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepTag {
    /// An iterate the optimizer steps from (the start point and every
    /// point produced by an optimizer step).
    PreStep,
    /// The point produced by the epoch-end assignment `W <- W_swa`.
    EpochRestart,
}

impl StepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StepTag::PreStep => "pre-step",
            StepTag::EpochRestart => "epoch-restart",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pre-step" => Some(StepTag::PreStep),
            "epoch-restart" => Some(StepTag::EpochRestart),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub point: SurfacePoint,
    /// Zero-based epoch during which the point was produced.
    pub epoch: usize,
    pub tag: StepTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub optimizer: OptimizerConfig,
    pub averaging: AveragingMode,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn last(&self) -> SurfacePoint {
        self.steps.last().expect("trajectories are nonempty").point
    }

    /// Smallest distance from any recorded point to the saddle at the
    /// origin.
    pub fn min_distance_to_saddle(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.point.norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs the averaged training loop on the surface: per iteration the
/// averager sees the current point, then the optimizer steps; at each epoch
/// end the point is replaced by `W_swa` (skipped when averaging is off).
pub fn run_trajectory(
    start: (f64, f64),
    optimizer: OptimizerConfig,
    averaging: AveragingMode,
    epochs: usize,
    iters_per_epoch: usize,
) -> Result<Trajectory> {
    if !(start.0.is_finite() && start.1.is_finite()) {
        return Err(Error::NonFinite("trajectory start".into()));
    }
    let mut w = [start.0, start.1];
    let mut opt = OptimizerState::new(optimizer, 2)?;
    let mut avg = AveragerState::new(averaging, &w, iters_per_epoch, epochs)?;
    let mut steps = Vec::with_capacity(1 + epochs * (iters_per_epoch + 1));
    steps.push(TrajectoryStep {
        point: SurfacePoint::new(w[0], w[1]),
        epoch: 0,
        tag: StepTag::PreStep,
    });
    for epoch in 0..epochs {
        for _ in 0..iters_per_epoch {
            avg.update(&w)?;
            let (gx, gy) = surface_grad(w[0], w[1]);
            opt.step(&mut w, &[gx, gy])
                .map_err(|e| diverged(steps.len(), &e))?;
            record(&mut steps, w, epoch, StepTag::PreStep)?;
        }
        if averaging != AveragingMode::Off {
            avg.end_epoch(&mut w)?;
            record(&mut steps, w, epoch, StepTag::EpochRestart)?;
        }
    }
    Ok(Trajectory {
        optimizer,
        averaging,
        steps,
    })
}

fn record(steps: &mut Vec<TrajectoryStep>, w: [f64; 2], epoch: usize, tag: StepTag) -> Result<()> {
    let point = SurfacePoint::new(w[0], w[1]);
    if !(point.norm() <= DIVERGENCE_RADIUS) || !point.f.is_finite() {
        return Err(Error::Diverged {
            step: steps.len(),
            detail: format!(
                "point ({}, {}) left the radius {DIVERGENCE_RADIUS}",
                w[0], w[1]
            ),
        });
    }
    steps.push(TrajectoryStep { point, epoch, tag });
    Ok(())
}

fn diverged(step: usize, cause: &Error) -> Error {
    Error::Diverged {
        step,
        detail: format!("{cause}"),
    }
}
