//! Neural ODEs whose integration horizon is a learned random variable.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod gamma;
pub mod models;
pub mod ode;
pub mod optim;
pub mod oracles;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Tape, Var};
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use gamma::GammaParams;
pub use models::{LatentTimeModel, ModelSpec, Prediction, Targets, Task, Variant};
pub use ode::{SolverConfig, Trajectory};
pub use tensor::Tensor;
pub use training::{ElboConfig, TrainConfig};
