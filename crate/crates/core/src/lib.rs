//! Lifting 2D human poses to 3D through a shared latent body representation.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod mat3;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod skeleton;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Default-precision aliases.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = graph::Tape<f64>;
pub type Adam64 = optim::Adam<f64>;
pub type Model64 = model::Model<f64>;
pub type PoseSample64 = data::PoseSample<f64>;
pub type NormStats64 = data::NormStats<f64>;
pub type Skeleton64 = skeleton::Skeleton<f64>;
pub type TrainOutcome64 = trainer::TrainOutcome<f64>;
