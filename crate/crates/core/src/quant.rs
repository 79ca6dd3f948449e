//! Low-bit quantizers used while training the value network and when
//! mapping it onto spiking hardware.
//!
//! Rounding is half-away-from-zero everywhere (`f64::round`). Activation
//! levels live on the grid `{0, 1/L, ..., 1}` with `L = 2^k - 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map applied after the activation quantizer inside the weight rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMap {
    /// `2 F_k(.) - 1`, symmetric range `[-1, 1]`.
    #[default]
    Dorefa,
    /// `2 F_k(.) - 1/2`, range `[-1/2, 3/2]`, as printed in the source text.
    HalfOffset,
}

impl WeightMap {
    fn offset(self) -> f64 {
        match self {
            WeightMap::Dorefa => 1.0,
            WeightMap::HalfOffset => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Bit count `k`.
    pub bits: u32,
    /// Upper end of the clamped activation range.
    pub sigma: f64,
    #[serde(default)]
    pub weight_map: WeightMap,
    /// Snap network inputs to the `k`-bit grid before the first layer.
    #[serde(default = "default_true")]
    pub quantize_input: bool,
    /// Optional per-layer override of `sigma` (hidden layers, in order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_sigma: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

impl QuantConfig {
    pub fn new(bits: u32, sigma: f64) -> Self {
        QuantConfig {
            bits,
            sigma,
            weight_map: WeightMap::Dorefa,
            quantize_input: true,
            layer_sigma: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.bits) {
            return Err(Error::config(format!("bit count {} outside 1..=32", self.bits)));
        }
        let sigmas = std::iter::once(self.sigma).chain(self.layer_sigma.iter().flatten().copied());
        for s in sigmas {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config(format!("activation scale {s} must be > 0")));
            }
        }
        Ok(())
    }

    /// Number of intervals on the grid, `2^k - 1`.
    pub fn levels(&self) -> f64 {
        levels(self.bits)
    }

    /// Activation scale for hidden layer `index`.
    pub fn sigma_for(&self, index: usize) -> f64 {
        self.layer_sigma
            .as_ref()
            .and_then(|s| s.get(index).copied())
            .unwrap_or(self.sigma)
    }

    /// Same settings at a different bit width.
    pub fn with_bits(&self, bits: u32) -> Self {
        QuantConfig { bits, ..self.clone() }
    }
}

/// `2^k - 1`.
pub fn levels(bits: u32) -> f64 {
    2f64.powi(bits as i32) - 1.0
}

/// `F_k(x) = round((2^k - 1) x) / (2^k - 1)` for `x` in `[0, 1]`.
///
/// Callers clamp first; out-of-range input is a contract violation.
pub fn quantize_activation(x: f64, bits: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x), "quantize_activation input {x} outside [0, 1]");
    let l = levels(bits);
    (l * x).round() / l
}

/// Clamp to `[0, 1]` then snap to the grid.
pub fn quantize_unit(x: f64, bits: u32) -> f64 {
    quantize_activation(x.clamp(0.0, 1.0), bits)
}

/// `ReLU^q(x) = sigma / (2^k - 1) * round((2^k - 1) * max(0, min(1, x)))`.
pub fn relu_q(x: f64, bits: u32, sigma: f64) -> f64 {
    let l = levels(bits);
    sigma / l * (l * x.clamp(0.0, 1.0)).round()
}

/// Quantizer boundaries that the straight-through rule knows about.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantizer {
    /// `F_k` on a clamped `[0, 1]` input.
    Activation,
    /// `ReLU^q`; the linear envelope has slope `sigma` on `[0, 1]`.
    ReluQ { sigma: f64 },
}

/// Straight-through gradient: identity on the clamp's active range, zero outside.
pub fn ste_gradient(quantizer: Quantizer, pre_clamp: f64, upstream: f64) -> f64 {
    if !(0.0..=1.0).contains(&pre_clamp) {
        return 0.0;
    }
    match quantizer {
        Quantizer::Activation => upstream,
        Quantizer::ReluQ { sigma } => upstream * sigma,
    }
}

/// Training noise `N(k) = Uniform(-0.5, 0.5) / (2^k - 1)`.
pub fn weight_noise<R: Rng + ?Sized>(bits: u32, rng: &mut R) -> f64 {
    rng.random_range(-0.5..0.5) / levels(bits)
}

/// Deterministic weight quantizer for one layer.
pub fn quantize_weights(weights: &[f64], bits: u32, map: WeightMap) -> Vec<f64> {
    QuantizedLayer::build(weights, bits, map, None::<fn() -> f64>).values
}

/// Weight quantizer with `N(k)` added inside `F_k`'s argument.
pub fn quantize_weights_noisy<R: Rng + ?Sized>(weights: &[f64], bits: u32, map: WeightMap, rng: &mut R) -> Vec<f64> {
    quantize_weights_with_noise(weights, bits, map, || weight_noise(bits, rng))
}

/// Weight quantizer with a caller-supplied noise source (already scaled by `1/(2^k-1)`).
pub fn quantize_weights_with_noise(weights: &[f64], bits: u32, map: WeightMap, noise: impl FnMut() -> f64) -> Vec<f64> {
    QuantizedLayer::build(weights, bits, map, Some(noise)).values
}

/// Quantized layer weights together with what the straight-through
/// backward pass needs to map gradients back onto the shadow weights.
#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    pub values: Vec<f64>,
    tanh: Vec<f64>,
    max_abs: f64,
    argmax: usize,
    // Pre-clamp argument of F_k was inside [0, 1].
    active: Vec<bool>,
}

impl QuantizedLayer {
    pub fn build<F: FnMut() -> f64>(weights: &[f64], bits: u32, map: WeightMap, mut noise: Option<F>) -> Self {
        let tanh: Vec<f64> = weights.iter().map(|w| w.tanh()).collect();
        let (argmax, max_abs) =
            tanh.iter().enumerate().fold(
                (0, 0.0f64),
                |(bi, bv), (i, t)| if t.abs() > bv { (i, t.abs()) } else { (bi, bv) },
            );
        if max_abs == 0.0 {
            // Degenerate all-zero layer: no scale to divide by.
            return QuantizedLayer {
                values: vec![0.0; weights.len()],
                active: vec![false; weights.len()],
                tanh,
                max_abs,
                argmax,
            };
        }
        let mut values = Vec::with_capacity(weights.len());
        let mut active = Vec::with_capacity(weights.len());
        for t in &tanh {
            let mut arg = t / (2.0 * max_abs) + 0.5;
            if let Some(n) = noise.as_mut() {
                arg += n();
            }
            active.push((0.0..=1.0).contains(&arg));
            values.push(2.0 * quantize_activation(arg.clamp(0.0, 1.0), bits) - map.offset());
        }
        QuantizedLayer {
            values,
            tanh,
            max_abs,
            argmax,
            active,
        }
    }

    /// Identity (no quantization): gradients pass straight to the weights.
    pub fn identity(weights: &[f64]) -> Self {
        QuantizedLayer {
            values: weights.to_vec(),
            tanh: Vec::new(),
            max_abs: 0.0,
            argmax: 0,
            active: Vec::new(),
        }
    }

    fn is_identity(&self) -> bool {
        self.tanh.is_empty() && !self.values.is_empty()
    }

    /// Accumulate `d loss / d w^f` into `out` given `d loss / d w^q`.
    ///
    /// The surrogate is `tanh(w) / max|tanh(W)|`, including the dependence of
    /// the layer maximum on its arg-max element.
    pub fn backprop(&self, grad_q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(grad_q.len(), out.len());
        if self.is_identity() {
            for (o, g) in out.iter_mut().zip(grad_q) {
                *o += g;
            }
            return;
        }
        if self.max_abs == 0.0 {
            return;
        }
        let m = self.max_abs;
        let mut grad_m = 0.0;
        for i in 0..grad_q.len() {
            if !self.active[i] {
                continue;
            }
            let t = self.tanh[i];
            // d/dw [2 (t/(2m) + 1/2)] = (1 - t^2) / m
            out[i] += grad_q[i] * (1.0 - t * t) / m;
            grad_m -= grad_q[i] * t / (m * m);
        }
        let ta = self.tanh[self.argmax];
        out[self.argmax] += grad_m * ta.signum() * (1.0 - ta * ta);
    }
}
