use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{encode_input, encode_poisson, SpikeTrains};
use crate::error::{Error, Result};

/// What happens to the membrane potential after a spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold, keeping the residual charge.
    #[default]
    Subtract,
    /// Reset to zero, discarding the residual.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Encoder {
    /// Evenly spaced deterministic rate code.
    #[default]
    Regular,
    /// Independent Bernoulli events per step.
    Poisson { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikingKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
}

impl SpikingKind {
    pub fn inputs(&self) -> usize {
        match *self {
            SpikingKind::Dense { inputs, .. } => inputs,
            SpikingKind::Conv {
                in_channels,
                in_h,
                in_w,
                ..
            } => in_channels * in_h * in_w,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            SpikingKind::Dense { outputs, .. } => outputs,
            SpikingKind::Conv {
                out_channels,
                out_h,
                out_w,
                ..
            } => out_channels * out_h * out_w,
        }
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            SpikingKind::Dense { inputs, outputs } => inputs * outputs,
            SpikingKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
        }
    }
}

/// One layer of integer weights and integrate-and-fire neurons.
#[derive(Debug, Clone)]
pub struct SpikingLayer {
    pub kind: SpikingKind,
    /// Same layout as the source layer: `[out, in]` or `[out, in_c, k, k]`.
    pub weights: Vec<i64>,
    pub threshold: i64,
    /// Potential every neuron starts from at the beginning of a simulation.
    pub initial_potential: i64,
    /// Accumulate only; never fire (used for the identity output layer).
    pub integrator: bool,
    // Weights regrouped so one input event touches a contiguous run.
    scatter: Vec<i64>,
    potentials: Vec<i64>,
}

impl SpikingLayer {
    pub fn new(
        kind: SpikingKind,
        weights: Vec<i64>,
        threshold: i64,
        initial_potential: i64,
        integrator: bool,
    ) -> Result<Self> {
        if weights.len() != kind.weight_len() {
            return Err(Error::config(format!(
                "spiking layer needs {} weights, got {}",
                kind.weight_len(),
                weights.len()
            )));
        }
        if threshold < 1 {
            return Err(Error::config(format!("firing threshold {threshold} must be >= 1")));
        }
        let scatter = match kind {
            SpikingKind::Dense { inputs, outputs } => {
                let mut t = vec![0; inputs * outputs];
                for o in 0..outputs {
                    for i in 0..inputs {
                        t[i * outputs + o] = weights[o * inputs + i];
                    }
                }
                t
            }
            SpikingKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                // [c][ky][kx][o]
                let mut t = vec![0; weights.len()];
                for o in 0..out_channels {
                    for c in 0..in_channels {
                        for k in 0..kernel * kernel {
                            t[(c * kernel * kernel + k) * out_channels + o] =
                                weights[(o * in_channels + c) * kernel * kernel + k];
                        }
                    }
                }
                t
            }
        };
        Ok(SpikingLayer {
            potentials: vec![0; kind.outputs()],
            kind,
            weights,
            threshold,
            initial_potential,
            integrator,
            scatter,
        })
    }

    /// Dense layer shorthand.
    pub fn dense(inputs: usize, outputs: usize, weights: Vec<i64>, threshold: i64, integrator: bool) -> Result<Self> {
        SpikingLayer::new(
            SpikingKind::Dense { inputs, outputs },
            weights,
            threshold,
            0,
            integrator,
        )
    }

    pub fn potentials(&self) -> &[i64] {
        &self.potentials
    }

    fn reset(&mut self) {
        let v0 = if self.integrator { 0 } else { self.initial_potential };
        self.potentials.iter_mut().for_each(|p| *p = v0);
    }

    fn integrate(&mut self, events: &[usize]) {
        match self.kind {
            SpikingKind::Dense { outputs, .. } => {
                for &i in events {
                    let row = &self.scatter[i * outputs..(i + 1) * outputs];
                    self.potentials.iter_mut().zip(row).for_each(|(p, w)| *p += w);
                }
            }
            SpikingKind::Conv {
                in_channels: _,
                out_channels,
                kernel,
                stride,
                padding,
                in_h,
                in_w,
                out_h,
                out_w,
            } => {
                let plane = in_h * in_w;
                for &i in events {
                    let c = i / plane;
                    let iy = (i % plane) / in_w;
                    let ix = i % in_w;
                    for ky in 0..kernel {
                        let Some(ny) = (iy + padding).checked_sub(ky) else {
                            continue;
                        };
                        if ny % stride != 0 || ny / stride >= out_h {
                            continue;
                        }
                        let oy = ny / stride;
                        for kx in 0..kernel {
                            let Some(nx) = (ix + padding).checked_sub(kx) else {
                                continue;
                            };
                            if nx % stride != 0 || nx / stride >= out_w {
                                continue;
                            }
                            let ox = nx / stride;
                            let base = ((c * kernel + ky) * kernel + kx) * out_channels;
                            let w = &self.scatter[base..base + out_channels];
                            for (o, wv) in w.iter().enumerate() {
                                self.potentials[(o * out_h + oy) * out_w + ox] += wv;
                            }
                        }
                    }
                }
            }
        }
    }

    fn fire(&mut self, reset: ResetMode, out: &mut Vec<usize>) {
        out.clear();
        for (i, p) in self.potentials.iter_mut().enumerate() {
            if *p >= self.threshold {
                out.push(i);
                *p = match reset {
                    ResetMode::Subtract => *p - self.threshold,
                    ResetMode::Zero => 0,
                };
            }
        }
    }
}

/// Converted policy: integer IF layers plus the rate-code parameters.
#[derive(Debug, Clone)]
pub struct SpikingNetwork {
    pub layers: Vec<SpikingLayer>,
    pub bits: u32,
    /// Repeats of the `2^k - 1` step base window.
    pub window_multiplier: usize,
    pub reset: ResetMode,
    pub encoder: Encoder,
    /// Preference per unit of integrated output potential.
    pub output_scale: f64,
    /// Activation value per output spike, for a spiking final layer.
    pub spike_scale: f64,
    rng: Option<ChaCha8Rng>,
}

impl SpikingNetwork {
    pub fn new(layers: Vec<SpikingLayer>, bits: u32, reset: ResetMode) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("spiking network has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].kind.outputs() != pair[1].kind.inputs() {
                return Err(Error::config("adjacent spiking layers disagree on size"));
            }
        }
        if layers[..layers.len() - 1].iter().any(|l| l.integrator) {
            return Err(Error::config("only the final layer may be an integrator"));
        }
        let l = crate::quant::levels(bits);
        Ok(SpikingNetwork {
            layers,
            bits,
            window_multiplier: 1,
            reset,
            encoder: Encoder::Regular,
            output_scale: 1.0 / (l * l),
            spike_scale: 1.0 / l,
            rng: None,
        })
    }

    pub fn with_encoder(mut self, encoder: Encoder) -> Self {
        self.rng = match encoder {
            Encoder::Regular => None,
            Encoder::Poisson { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        self.encoder = encoder;
        self
    }

    /// Simulation window `N_t`.
    pub fn window(&self) -> usize {
        crate::quant::levels(self.bits) as usize * self.window_multiplier.max(1)
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].kind.inputs()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").kind.outputs()
    }

    pub fn encode(&mut self, observation: &[f64]) -> SpikeTrains {
        match (&self.encoder, self.rng.as_mut()) {
            (Encoder::Poisson { .. }, Some(rng)) => encode_poisson(observation, self.bits, self.window_multiplier, rng),
            _ => encode_input(observation, self.bits, self.window_multiplier),
        }
    }

    /// Run the full window; returns output spike counts, or the integrated
    /// potential when the final layer is an integrator.
    pub fn simulate(&mut self, trains: &SpikeTrains) -> Vec<i64> {
        self.simulate_detailed(trains).output
    }

    pub fn simulate_detailed(&mut self, trains: &SpikeTrains) -> Simulation {
        assert_eq!(
            trains.nodes(),
            self.input_len(),
            "spike trains do not match input layer"
        );
        for layer in &mut self.layers {
            layer.reset();
        }
        let mut counts: Vec<Vec<i64>> = self.layers.iter().map(|l| vec![0; l.kind.outputs()]).collect();
        let steps = trains.step_lists();
        let mut incoming: Vec<usize> = Vec::new();
        let mut fired: Vec<usize> = Vec::new();
        let reset = self.reset;
        for events in &steps {
            incoming.clear();
            incoming.extend_from_slice(events);
            for (li, layer) in self.layers.iter_mut().enumerate() {
                layer.integrate(&incoming);
                if layer.integrator {
                    break;
                }
                layer.fire(reset, &mut fired);
                for &i in &fired {
                    counts[li][i] += 1;
                }
                std::mem::swap(&mut incoming, &mut fired);
            }
        }
        let last = self.layers.last().expect("non-empty");
        let output = if last.integrator {
            last.potentials.clone()
        } else {
            counts.last().expect("non-empty").clone()
        };
        Simulation { output, counts }
    }

    /// Preferences decoded from the output layer.
    pub fn infer(&mut self, observation: &[f64]) -> Vec<f64> {
        let trains = self.encode(observation);
        let integrator = self.layers.last().expect("non-empty").integrator;
        let scale = if integrator {
            self.output_scale
        } else {
            self.spike_scale
        };
        self.simulate(&trains).into_iter().map(|v| v as f64 * scale).collect()
    }
}

/// Output plus spike counts of every layer (integrator layers count nothing).
#[derive(Debug, Clone)]
pub struct Simulation {
    pub output: Vec<i64>,
    pub counts: Vec<Vec<i64>>,
}
