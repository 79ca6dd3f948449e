use super::network::{ResetMode, SpikingKind, SpikingLayer, SpikingNetwork};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerKind, LayerWeights, NetworkSpec};
use crate::quant::{self, QuantConfig};

/// Map a bias-free trained network onto integer IF layers.
///
/// Weights are quantized at `quant.bits` first, then scaled by `L = 2^k - 1`.
/// A layer whose input grid step is `s / L` gets threshold `L / s` (so `L` when
/// sigma is 1) and starts from half a threshold of charge, which turns the
/// spike count into the rounded quantized activation.
pub fn convert(spec: &NetworkSpec, weights: &LayerWeights, quant: &QuantConfig) -> Result<SpikingNetwork> {
    quant.validate()?;
    let shapes = spec.shapes()?;
    weights.check(spec)?;
    if !spec.is_bias_free() {
        return Err(Error::Conversion("network has bias terms".into()));
    }
    let n = spec.layers.len();
    let l = quant::levels(quant.bits);
    let mut layers = Vec::with_capacity(n);
    // Value of one input spike, relative to 1/L.
    let mut input_step = 1.0;
    let mut hidden_index = 0;
    let mut output_scale = 1.0 / (l * l);
    let mut spike_scale = 1.0 / l;
    for (i, (layer, params)) in spec.layers.iter().zip(&weights.layers).enumerate() {
        let integrator = match layer.activation {
            Activation::Identity if i + 1 == n => true,
            Activation::Identity => {
                return Err(Error::Conversion(format!(
                    "hidden layer {i} has identity activation; IF neurons need ReLU"
                )))
            }
            Activation::Relu | Activation::ReluQ => false,
        };
        let q = quant::quantize_weights(params.weight.data(), quant.bits, quant.weight_map);
        let int_weights: Vec<i64> = q.iter().map(|w| (w * l).round() as i64).collect();
        let threshold = ((l / input_step).round() as i64).max(1);
        let kind = match layer.kind {
            LayerKind::FullyConnected { inputs, outputs } => SpikingKind::Dense { inputs, outputs },
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => SpikingKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_h: shapes[i][1],
                in_w: shapes[i][2],
                out_h: shapes[i + 1][1],
                out_w: shapes[i + 1][2],
            },
        };
        if integrator {
            output_scale = input_step / (l * l);
        } else {
            let sigma = quant.sigma_for(hidden_index);
            spike_scale = sigma / l;
            hidden_index += 1;
            input_step = sigma;
        }
        layers.push(SpikingLayer::new(
            kind,
            int_weights,
            threshold,
            threshold / 2,
            integrator,
        )?);
    }
    let mut snn = SpikingNetwork::new(layers, quant.bits, ResetMode::Subtract)?;
    snn.output_scale = output_scale;
    snn.spike_scale = spike_scale;
    Ok(snn)
}
