//! Core of the seed-stability toolkit.
//!
//! Everything here is pure computation over `alloc` collections: a small
//! reverse-mode differentiation engine, the CNN + attention text classifier,
//! first-order optimizers, aggressive stochastic weight averaging (ASWA) and
//! its norm-filtered variant (NASWA), interpretation extractors (attention,
//! gradient saliency, LIME) and the stability metrics used to compare
//! differently seeded models. File formats, the experiment runner and the CLI
//! live in the `seedstab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod averaging;
pub mod data;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod interpret;
mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod stability;
pub mod surface;
pub mod tensor;

pub use averaging::{
    train_with_averaging, AveragerState, AveragingMode, EpochMetrics, Objective, TrainConfig,
    TrainOutcome,
};
pub use data::{
    generate_synthetic, Dataset, EncodedSample, Sample, Split, SyntheticSpec, Vocabulary,
};
pub use error::{Error, Result};
pub use graph::{ComputeGraph, Gradients, NodeId};
pub use interpret::{InterpretationDistribution, LimeConfig, LimeExplanation, Method, Predictor};
pub use model::{AttentionKind, ForwardOutput, Model, ModelConfig};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use rng::SeededRng;
pub use stability::{BucketStats, EntropyAggregation, StabilityReport};
pub use surface::{run_trajectory, SurfacePoint, Trajectory};
pub use tensor::Tensor;

/// Version tag recorded in every emitted artifact.
pub const ARTIFACT_VERSION: &str = concat!("seedstab-", env!("CARGO_PKG_VERSION"));
