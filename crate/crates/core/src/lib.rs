//! Learned joint and separate source-channel coding over differentiable
//! channel models.
//!
//! The numeric core (tensors, distributions, channels, models, objectives) is
//! generic over a [`Scalar`] type; the experiment harness (config, data,
//! training, evaluation, sweeps) and the CLI run in `f64`. Concrete aliases for both precisions live at the crate root.

pub mod autodiff;
pub mod channels;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod image;
pub mod metrics;
pub mod mmd;
pub mod models;
pub mod objectives;
pub mod scalar;
pub mod training;

pub use autodiff::{Gradients, ParameterStore, Sgd, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Deterministic, platform-independent RNG used throughout the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParameterStore64 = ParameterStore<f64>;
pub type ParameterStore32 = ParameterStore<f32>;
pub type Tape64<'s> = Tape<'s, f64>;
pub type Tape32<'s> = Tape<'s, f32>;
