use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::quant::{self, QuantConfig, QuantizedLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Full-precision parameters, one entry per layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub layers: Vec<LayerParams>,
}

impl LayerWeights {
    pub fn zeros_like(spec: &NetworkSpec) -> Self {
        LayerWeights {
            layers: spec
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Tensor::zeros(l.weight_shape()),
                    bias: l.use_bias.then(|| Tensor::zeros(vec![l.out_channels()])),
                })
                .collect(),
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::config(format!(
                "weights have {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (p, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            if p.weight.shape() != l.weight_shape().as_slice() {
                return Err(Error::config(format!(
                    "layer {i}: weight shape {:?}, expected {:?}",
                    p.weight.shape(),
                    l.weight_shape()
                )));
            }
            match (&p.bias, l.use_bias) {
                (None, false) => {}
                (Some(b), true) if b.shape() == [l.out_channels()] => {}
                _ => return Err(Error::config(format!("layer {i}: bias does not match spec"))),
            }
        }
        Ok(())
    }

    /// Every parameter buffer in a fixed order.
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|p| std::iter::once(p.weight.data()).chain(p.bias.as_ref().map(|b| b.data())))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|p| std::iter::once(p.weight.data_mut()).chain(p.bias.as_mut().map(|b| b.data_mut())))
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Fan-in scaled uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; biases zero.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> LayerWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = LayerWeights::zeros_like(spec);
    for (p, l) in weights.layers.iter_mut().zip(&spec.layers) {
        let limit = (6.0 / l.fan_in() as f64).sqrt();
        for w in p.weight.data_mut() {
            *w = rng.random_range(-limit..=limit);
        }
    }
    weights
}

/// Effective weights for one pass: quantized (possibly with noise) or copied.
#[derive(Debug, Clone)]
pub struct Prepared {
    layers: Vec<PreparedLayer>,
    quant: Option<QuantConfig>,
}

#[derive(Debug, Clone)]
struct PreparedLayer {
    weight: QuantizedLayer,
    bias: Option<Vec<f64>>,
}

impl Prepared {
    /// Quantize every layer when `quant` is given; `noise` adds `N(k)` per weight.
    pub fn new(
        spec: &NetworkSpec,
        weights: &LayerWeights,
        quant: Option<&QuantConfig>,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<Self> {
        spec.shapes()?;
        weights.check(spec)?;
        if let Some(q) = quant {
            q.validate()?;
        } else if spec.layers.iter().any(|l| l.activation == Activation::ReluQ) {
            return Err(Error::config("ReLU^q layers need a quantization config"));
        }
        let mut noise = noise;
        let layers = weights
            .layers
            .iter()
            .map(|p| {
                let w = p.weight.data();
                let weight = match (quant, noise.as_deref_mut()) {
                    (None, _) => QuantizedLayer::identity(w),
                    (Some(q), None) => QuantizedLayer::build(w, q.bits, q.weight_map, None::<fn() -> f64>),
                    (Some(q), Some(rng)) => {
                        QuantizedLayer::build(w, q.bits, q.weight_map, Some(|| quant::weight_noise(q.bits, rng)))
                    }
                };
                PreparedLayer {
                    weight,
                    bias: p.bias.as_ref().map(|b| b.data().to_vec()),
                }
            })
            .collect();
        Ok(Prepared {
            layers,
            quant: quant.cloned(),
        })
    }

    /// Effective weight values of layer `i`.
    pub fn weight(&self, i: usize) -> &[f64] {
        &self.layers[i].weight.values
    }

    /// Forward without recording anything for backward.
    pub fn infer(&self, spec: &NetworkSpec, input: &Tensor) -> Result<Tensor> {
        self.run(spec, input, None)
    }

    /// Forward that records pre/post activations; consumes `self` into the cache.
    pub fn train_forward(self, spec: &NetworkSpec, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut trace = Trace::default();
        let out = self.run(spec, input, Some(&mut trace))?;
        Ok((
            out,
            ForwardCache {
                prepared: Some(self),
                trace,
            },
        ))
    }

    fn run(&self, spec: &NetworkSpec, input: &Tensor, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        let shapes = spec.shapes()?;
        let in_len = spec.input_len();
        let batched = input.shape() != spec.input_shape.as_slice();
        if batched
            && (input.shape().len() != spec.input_shape.len() + 1 || &input.shape()[1..] != spec.input_shape.as_slice())
        {
            return Err(Error::config(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape(),
                spec.input_shape
            )));
        }
        let batch = if batched { input.shape()[0] } else { 1 };
        let mut x = input.data().to_vec();
        if let Some(q) = &self.quant {
            if q.quantize_input {
                for v in &mut x {
                    *v = quant::quantize_unit(*v, q.bits);
                }
            }
        }
        debug_assert_eq!(x.len(), batch * in_len);
        let mut hidden_index = 0;
        for (i, (layer, prepared)) in spec.layers.iter().zip(&self.layers).enumerate() {
            let mut z = layer_forward(layer, &shapes[i], &shapes[i + 1], prepared, &x, batch);
            let act = self.activation_for(layer, hidden_index);
            if layer.activation != Activation::Identity {
                hidden_index += 1;
            }
            let mut a = std::mem::take(&mut z);
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(std::mem::take(&mut x));
                t.pre.push(a.clone());
                t.acts.push(act);
            }
            act.apply(&mut a);
            x = a;
        }
        if let Some(t) = trace {
            t.batch = batch;
        }
        let out_shape = shapes.last().expect("non-empty").clone();
        let shape = if batched {
            std::iter::once(batch).chain(out_shape).collect()
        } else {
            out_shape
        };
        Tensor::new(shape, x)
    }

    fn activation_for(&self, layer: &LayerSpec, hidden_index: usize) -> Act {
        match (layer.activation, &self.quant) {
            (Activation::Identity, _) => Act::Identity,
            (_, Some(q)) => Act::ReluQ {
                bits: q.bits,
                sigma: q.sigma_for(hidden_index),
            },
            (Activation::Relu, None) => Act::Relu,
            (Activation::ReluQ, None) => unreachable!("rejected in Prepared::new"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Act {
    Identity,
    Relu,
    ReluQ { bits: u32, sigma: f64 },
}

impl Act {
    fn apply(self, z: &mut [f64]) {
        match self {
            Act::Identity => {}
            Act::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Act::ReluQ { bits, sigma } => z.iter_mut().for_each(|v| *v = quant::relu_q(*v, bits, sigma)),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::ReluQ { sigma, .. } => quant::ste_gradient(quant::Quantizer::ReluQ { sigma }, z, 1.0),
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Trace {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    acts: Vec<Act>,
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    prepared: Option<Prepared>,
    trace: Trace,
}

impl ForwardCache {
    pub fn is_empty(&self) -> bool {
        self.prepared.is_none()
    }

    pub fn batch(&self) -> usize {
        self.trace.batch
    }
}

/// Full-precision or quantized forward pass (deterministic quantization, no noise).
pub fn forward(
    spec: &NetworkSpec,
    weights: &LayerWeights,
    input: &Tensor,
    quant: Option<&QuantConfig>,
) -> Result<(Tensor, ForwardCache)> {
    Prepared::new(spec, weights, quant, None)?.train_forward(spec, input)
}

/// Gradient of the loss with respect to the full-precision weights.
///
/// Quantizer boundaries use the straight-through rules in [`crate::quant`].
pub fn backward(
    spec: &NetworkSpec,
    weights: &LayerWeights,
    cache: &ForwardCache,
    output_grad: &Tensor,
) -> Result<LayerWeights> {
    let Some(prepared) = &cache.prepared else {
        return Err(Error::usage("backward called without a forward cache"));
    };
    weights.check(spec)?;
    let shapes = spec.shapes()?;
    let trace = &cache.trace;
    let batch = trace.batch;
    let n = spec.layers.len();
    if trace.pre.len() != n {
        return Err(Error::usage("forward cache does not match network"));
    }
    if output_grad.len() != batch * spec.output_len() {
        return Err(Error::config(format!(
            "output gradient has {} values, expected {}",
            output_grad.len(),
            batch * spec.output_len()
        )));
    }
    let mut grads = LayerWeights::zeros_like(spec);
    let mut dz: Vec<f64> = output_grad
        .data()
        .iter()
        .zip(&trace.pre[n - 1])
        .map(|(g, z)| g * trace.acts[n - 1].derivative(*z))
        .collect();
    for l in (0..n).rev() {
        let layer = &spec.layers[l];
        let pl = &prepared.layers[l];
        let mut dw = vec![0.0; pl.weight.values.len()];
        let need_dx = l > 0;
        let dx = layer_backward(
            layer,
            &shapes[l],
            &shapes[l + 1],
            &pl.weight.values,
            &trace.inputs[l],
            &dz,
            batch,
            &mut dw,
            grads.layers[l].bias.as_mut().map(|b| b.data_mut()),
            need_dx,
        );
        pl.weight.backprop(&dw, grads.layers[l].weight.data_mut());
        if need_dx {
            let act = trace.acts[l - 1];
            dz = dx
                .iter()
                .zip(&trace.pre[l - 1])
                .map(|(g, z)| g * act.derivative(*z))
                .collect();
        }
    }
    Ok(grads)
}

fn layer_forward(
    layer: &LayerSpec,
    in_shape: &[usize],
    out_shape: &[usize],
    p: &PreparedLayer,
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let w = &p.weight.values;
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    let mut z = vec![0.0; batch * out_len];
    match layer.kind {
        LayerKind::FullyConnected { inputs, outputs } => {
            gemm(batch, inputs, outputs, x, false, w, true, 0.0, &mut z);
            if let Some(b) = &p.bias {
                for row in z.chunks_mut(outputs) {
                    row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
                }
            }
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let geo = ConvGeometry {
                channels: in_channels,
                height: in_shape[1],
                width: in_shape[2],
                kernel,
                stride,
                padding,
                out_h: out_shape[1],
                out_w: out_shape[2],
            };
            let rows = in_channels * kernel * kernel;
            let pixels = geo.out_h * geo.out_w;
            let mut cols = vec![0.0; rows * pixels];
            for b in 0..batch {
                geo.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
                let zb = &mut z[b * out_len..(b + 1) * out_len];
                gemm(out_channels, rows, pixels, w, false, &cols, false, 0.0, zb);
                if let Some(bias) = &p.bias {
                    for (o, chunk) in zb.chunks_mut(pixels).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += bias[o]);
                    }
                }
            }
        }
    }
    z
}

/// Returns `d loss / d x` when `need_dx`; accumulates weight and bias grads.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &LayerSpec,
    in_shape: &[usize],
    out_shape: &[usize],
    w: &[f64],
    x: &[f64],
    dz: &[f64],
    batch: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Vec<f64> {
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match layer.kind {
        LayerKind::FullyConnected { inputs, outputs } => {
            // dW[out x in] = dZ^T[out x B] * X[B x in]
            gemm(outputs, batch, inputs, dz, true, x, false, 0.0, dw);
            if let Some(db) = db {
                for row in dz.chunks(outputs) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
            let mut dx = Vec::new();
            if need_dx {
                dx = vec![0.0; batch * inputs];
                gemm(batch, outputs, inputs, dz, false, w, false, 0.0, &mut dx);
            }
            dx
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let geo = ConvGeometry {
                channels: in_channels,
                height: in_shape[1],
                width: in_shape[2],
                kernel,
                stride,
                padding,
                out_h: out_shape[1],
                out_w: out_shape[2],
            };
            let rows = in_channels * kernel * kernel;
            let pixels = geo.out_h * geo.out_w;
            let mut cols = vec![0.0; rows * pixels];
            let mut dcols = vec![0.0; rows * pixels];
            let mut dx = if need_dx { vec![0.0; batch * in_len] } else { Vec::new() };
            let mut db = db;
            for b in 0..batch {
                let dzb = &dz[b * out_len..(b + 1) * out_len];
                geo.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
                // dW[out x rows] += dZ[out x P] * cols^T[P x rows]
                gemm(out_channels, pixels, rows, dzb, false, &cols, true, 1.0, dw);
                if let Some(db) = db.as_deref_mut() {
                    for (o, chunk) in dzb.chunks(pixels).enumerate() {
                        db[o] += chunk.iter().sum::<f64>();
                    }
                }
                if need_dx {
                    // dcols[rows x P] = W^T[rows x out] * dZ[out x P]
                    gemm(rows, out_channels, pixels, w, true, dzb, false, 0.0, &mut dcols);
                    geo.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
                }
            }
            dx
        }
    }
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.padding)?;
        (pos < limit).then_some(pos)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let pixels = self.out_h * self.out_w;
        let kk = self.kernel;
        for c in 0..self.channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..kk {
                for kx in 0..kk {
                    let row = (c * kk + ky) * kk + kx;
                    let dst = &mut cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.out_h {
                        let iy = self.source(oy, ky, self.height);
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = match (iy, self.source(ox, kx, self.width)) {
                                (Some(iy), Some(ix)) => plane[iy * self.width + ix],
                                _ => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let pixels = self.out_h * self.out_w;
        let kk = self.kernel;
        for c in 0..self.channels {
            let base = c * self.height * self.width;
            for ky in 0..kk {
                for kx in 0..kk {
                    let row = (c * kk + ky) * kk + kx;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.height) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.width) {
                                dx[base + iy * self.width + ix] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_dense(w: Vec<f64>, inputs: usize, outputs: usize, act: Activation) -> (NetworkSpec, LayerWeights) {
        let spec = NetworkSpec {
            input_shape: vec![inputs],
            layers: vec![LayerSpec::dense(inputs, outputs, act)],
        };
        let weights = LayerWeights {
            layers: vec![LayerParams {
                weight: Tensor::new(vec![outputs, inputs], w).unwrap(),
                bias: None,
            }],
        };
        (spec, weights)
    }

    #[test]
    fn identity_layer_passes_input() {
        let (spec, w) = single_dense(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
            Activation::Identity,
        );
        let x = Tensor::from_vec(vec![0.5, -2.0, 7.0]);
        let (y, _) = forward(&spec, &w, &x, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn relu_hand_evaluation() {
        // Hidden ReLU policy is used directly; final-layer rule only matters for validate().
        let (spec, w) = single_dense(vec![1.0, 1.0, 1.0, -1.0], 2, 2, Activation::Relu);
        let (y, _) = forward(&spec, &w, &Tensor::from_vec(vec![1.0, 2.0]), None).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn cartpole_shape() {
        let spec = NetworkSpec::mlp(&[4, 256, 256, 2], Activation::ReluQ);
        let w = init_weights(&spec, 1);
        let q = QuantConfig::new(4, 1.0);
        let (y, _) = forward(&spec, &w, &Tensor::from_vec(vec![0.5; 4]), Some(&q)).unwrap();
        assert_eq!(y.shape(), &[2]);
        let batch = Tensor::new(vec![3, 4], vec![0.25; 12]).unwrap();
        let (y, _) = forward(&spec, &w, &batch, Some(&q)).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Relu);
        let w = init_weights(&spec, 1);
        let err = forward(&spec, &w, &Tensor::from_vec(vec![0.0; 5]), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn relu_q_without_config_rejected() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::ReluQ);
        let w = init_weights(&spec, 1);
        assert!(forward(&spec, &w, &Tensor::from_vec(vec![0.0; 4]), None).is_err());
    }

    #[test]
    fn linear_gradient() {
        let (spec, w) = single_dense(vec![0.7], 1, 1, Activation::Identity);
        let (_, cache) = forward(&spec, &w, &Tensor::from_vec(vec![2.0]), None).unwrap();
        let g = backward(&spec, &w, &cache, &Tensor::from_vec(vec![1.0])).unwrap();
        assert_eq!(g.layers[0].weight.data(), &[2.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Relu);
        let w = init_weights(&spec, 3);
        let (_, cache) = forward(&spec, &w, &Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]), None).unwrap();
        let g = backward(&spec, &w, &cache, &Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        assert!(g.params().all(|p| p.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn empty_cache_is_usage_error() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Relu);
        let w = init_weights(&spec, 3);
        let err = backward(&spec, &w, &ForwardCache::default(), &Tensor::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = NetworkSpec::mlp(&[4, 256, 256, 2], Activation::ReluQ);
        let a = init_weights(&spec, 42);
        let b = init_weights(&spec, 42);
        let c = init_weights(&spec, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.layers[0].weight.data().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn bias_free_has_no_additive_params() {
        let spec = NetworkSpec::mlp(&[4, 8, 2], Activation::Relu);
        let w = init_weights(&spec, 0);
        assert!(w.layers.iter().all(|l| l.bias.is_none()));
        assert_eq!(w.param_count(), 4 * 8 + 8 * 2);
    }

    #[test]
    fn bias_is_added() {
        let mut spec = NetworkSpec::mlp(&[2, 2], Activation::Relu);
        spec.layers[0] = spec.layers[0].with_bias();
        let mut w = LayerWeights::zeros_like(&spec);
        w.layers[0].bias = Some(Tensor::from_vec(vec![1.5, -0.5]));
        let (y, _) = forward(&spec, &w, &Tensor::from_vec(vec![3.0, 4.0]), None).unwrap();
        assert_abs_diff_eq!(y.data()[0], 1.5);
        assert_abs_diff_eq!(y.data()[1], -0.5);
    }

    #[test]
    fn quantized_forward_uses_grid() {
        let spec = NetworkSpec::mlp(&[3, 5, 2], Activation::ReluQ);
        let w = init_weights(&spec, 9);
        let q = QuantConfig::new(2, 1.0);
        let (y, _) = forward(&spec, &w, &Tensor::from_vec(vec![0.2, 0.9, 0.5]), Some(&q)).unwrap();
        // hidden levels are multiples of 1/3, weights odd multiples of 1/3, so y * 9 is an integer
        for v in y.data() {
            assert_abs_diff_eq!((v * 9.0).round(), v * 9.0, epsilon = 1e-9);
        }
    }
}
