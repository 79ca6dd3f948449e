//! Rate-coded integrate-and-fire networks converted from bias-free quantized
//! networks.
//!
//! Integer weights are the quantized weights times `L = 2^k - 1`, so one input
//! spike carries one grid step. A hidden neuron fires when its potential
//! reaches the layer threshold; the last (identity) layer never fires and its
//! accumulated potential is read out as the action preferences.

mod convert;
mod encode;
mod export;
mod network;

pub use convert::convert;
pub use encode::{encode_input, encode_poisson, SpikeTrains};
pub use export::{load_snn, save_snn, snn_bytes, snn_from_bytes};
pub use network::{Encoder, ResetMode, SpikingKind, SpikingLayer, SpikingNetwork};

use crate::nn::Tensor;

/// Encode, simulate and decode one observation.
pub fn infer(snn: &mut SpikingNetwork, observation: &Tensor) -> Vec<f64> {
    snn.infer(observation.data())
}

/// Per-output spike counts (or integrated potential for an identity output layer).
pub fn simulate(snn: &mut SpikingNetwork, trains: &SpikeTrains) -> Vec<i64> {
    snn.simulate(trains)
}
