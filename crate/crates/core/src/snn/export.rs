//! Binary export of a converted network, framed like the weight checkpoint:
//! `b"RIVCSNN\0"`, version, encoder/reset settings, decode scales, then each
//! layer's geometry, threshold, initial potential, integrator flag and `i64`
//! weights.

use std::fs;
use std::path::Path;

use super::network::{Encoder, ResetMode, SpikingKind, SpikingLayer, SpikingNetwork};
use crate::error::{Error, Result};
use crate::format::{Reader, Writer};

const MAGIC: &[u8; 8] = b"RIVCSNN\0";
const VERSION: u32 = 1;

pub fn snn_bytes(snn: &SpikingNetwork) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(snn.bits);
    w.u64(snn.window_multiplier as u64);
    w.u8(match snn.reset {
        ResetMode::Subtract => 0,
        ResetMode::Zero => 1,
    });
    match snn.encoder {
        Encoder::Regular => w.u8(0),
        Encoder::Poisson { seed } => {
            w.u8(1);
            w.u64(seed);
        }
    }
    w.f64(snn.output_scale);
    w.f64(snn.spike_scale);
    w.u32(snn.layers.len() as u32);
    for layer in &snn.layers {
        match layer.kind {
            SpikingKind::Dense { inputs, outputs } => {
                w.u8(0);
                w.dims(&[inputs, outputs]);
            }
            SpikingKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_h,
                in_w,
                out_h,
                out_w,
            } => {
                w.u8(1);
                w.dims(&[in_channels, out_channels, kernel, stride, padding, in_h, in_w, out_h]);
                w.u64(out_w as u64);
            }
        }
        w.i64(layer.threshold);
        w.i64(layer.initial_potential);
        w.u8(layer.integrator as u8);
        w.u64(layer.weights.len() as u64);
        for &v in &layer.weights {
            w.i64(v);
        }
    }
    w.finish()
}

pub fn snn_from_bytes(bytes: &[u8]) -> Result<SpikingNetwork> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SNN export version {version}")));
    }
    let bits = r.u32()?;
    if !(1..=32).contains(&bits) {
        return Err(Error::Format(format!("bit count {bits} out of range")));
    }
    let window_multiplier = r.usize()?;
    let reset = match r.u8()? {
        0 => ResetMode::Subtract,
        1 => ResetMode::Zero,
        v => return Err(Error::Format(format!("bad reset mode {v}"))),
    };
    let encoder = match r.u8()? {
        0 => Encoder::Regular,
        1 => Encoder::Poisson { seed: r.u64()? },
        v => return Err(Error::Format(format!("bad encoder tag {v}"))),
    };
    let output_scale = r.f64()?;
    let spike_scale = r.f64()?;
    let n = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..n {
        let kind = match r.u8()? {
            0 => {
                let d = r.dims()?;
                let [inputs, outputs] = d[..] else {
                    return Err(Error::Format("dense layer needs two dims".into()));
                };
                SpikingKind::Dense { inputs, outputs }
            }
            1 => {
                let d = r.dims()?;
                let [in_channels, out_channels, kernel, stride, padding, in_h, in_w, out_h] = d[..] else {
                    return Err(Error::Format("conv layer needs eight dims".into()));
                };
                SpikingKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    in_h,
                    in_w,
                    out_h,
                    out_w: r.usize()?,
                }
            }
            v => return Err(Error::Format(format!("bad layer tag {v}"))),
        };
        let threshold = r.i64()?;
        let initial_potential = r.i64()?;
        let integrator = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad integrator flag {v}"))),
        };
        let count = r.usize()?;
        r.check_len(count, 8)?;
        let weights = (0..count).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
        layers.push(
            SpikingLayer::new(kind, weights, threshold, initial_potential, integrator)
                .map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    r.finish()?;
    let mut snn = SpikingNetwork::new(layers, bits, reset)
        .map_err(|e| Error::Format(e.to_string()))?
        .with_encoder(encoder);
    snn.window_multiplier = window_multiplier;
    snn.output_scale = output_scale;
    snn.spike_scale = spike_scale;
    Ok(snn)
}

pub fn save_snn(snn: &SpikingNetwork, path: &Path) -> Result<()> {
    fs::write(path, snn_bytes(snn))?;
    Ok(())
}

pub fn load_snn(path: &Path) -> Result<SpikingNetwork> {
    snn_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_weights, Activation, NetworkSpec};
    use crate::quant::QuantConfig;
    use crate::snn::convert;

    #[test]
    fn roundtrip_dense_and_conv() {
        let q = QuantConfig::new(4, 1.0);
        let specs = [
            NetworkSpec::mlp(&[4, 8, 2], Activation::ReluQ),
            NetworkSpec::conv_net([3, 10, 10], &[(4, 3, 2)], &[6, 3], Activation::ReluQ).unwrap(),
        ];
        for spec in specs {
            let mut snn = convert(&spec, &init_weights(&spec, 3), &q).unwrap();
            snn.window_multiplier = 2;
            let bytes = snn_bytes(&snn);
            let mut back = snn_from_bytes(&bytes).unwrap();
            assert_eq!(snn_bytes(&back), bytes);
            let obs = vec![0.6; snn.input_len()];
            assert_eq!(back.infer(&obs), snn.infer(&obs));
        }
    }

    #[test]
    fn truncated_rejected() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::ReluQ);
        let snn = convert(&spec, &init_weights(&spec, 3), &QuantConfig::new(4, 1.0)).unwrap();
        let bytes = snn_bytes(&snn);
        assert!(snn_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
