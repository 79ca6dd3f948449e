//! Quantization-aware, gap-increasing value learning for policies that run
//! as rate-coded integrate-and-fire spiking networks.
//!
//! The pieces, bottom-up:
//!
//! - [`nn`]: dense/conv network engine with gradients, the trainable shadow weights.
//! - [`quant`]: activation/weight quantizers, training noise, straight-through rules.
//! - [`snn`]: conversion of a quantized network into integer IF layers and their simulation.
//! - [`cvi`]: replay buffer, mellowmax, gap-increasing targets and the network update.
//! - [`envs`]: cart-pole and a pixel visual-servo task.
//! - [`harness`]: the convert / sample / update loop, bit sweeps, metrics and result files.

pub mod cvi;
pub mod envs;
pub mod error;
mod format;
pub mod harness;
pub mod nn;
pub mod quant;
pub mod snn;

pub use error::{Error, Result};
