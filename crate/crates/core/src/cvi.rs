//! Gap-increasing value learning over action preferences.
//!
//! The regression target for a sample `(s, a, r, s')` is
//! `r + gamma * mm(P(s')) + alpha * (P(s, a) - mm(P(s)))`, every `P` taken
//! from parameters frozen when the update starts, with `mm` the mellowmax.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{backward, optimizer_step, LayerWeights, NetworkSpec, OptimizerState, Prepared, Tensor};
use crate::quant::QuantConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<Tensor>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<Tensor>,
    /// Environment reached a failure state; no bootstrap from `next_state`.
    pub terminal: bool,
}

/// FIFO store with fixed capacity; the oldest sample is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GioConfig {
    /// Gap coefficient in `[0, 1]`.
    pub alpha: f64,
    /// Inverse temperature, `> 0`.
    pub beta: f64,
    /// Discount in `[0, 1)`.
    pub gamma: f64,
}

impl GioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta {} must be positive", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// `(1/beta) log(mean(exp(beta v)))`, shifted by the maximum for stability.
pub fn mellowmax(values: &[f64], beta: f64) -> f64 {
    assert!(!values.is_empty(), "mellowmax of an empty vector");
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().map(|v| (beta * (v - max)).exp()).sum::<f64>() / values.len() as f64;
    max + mean.ln() / beta
}

pub fn softmax_policy(prefs: &[f64], beta: f64) -> Vec<f64> {
    let max = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = prefs.iter().map(|p| (beta * (p - max)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax sample, or the greedy choice with lowest-index tie-break.
pub fn select_action<R: Rng + ?Sized>(prefs: &[f64], beta: f64, rng: &mut R, greedy: bool) -> usize {
    if greedy {
        return argmax(prefs);
    }
    let probs = softmax_policy(prefs, beta);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Regression target from frozen-network preferences at `s` and `s'`.
pub fn gio_target(t: &Transition, prefs_s: &[f64], prefs_next: &[f64], cfg: &GioConfig) -> f64 {
    let bootstrap = if t.terminal {
        0.0
    } else {
        cfg.gamma * mellowmax(prefs_next, cfg.beta)
    };
    t.reward + bootstrap + cfg.alpha * (prefs_s[t.action] - mellowmax(prefs_s, cfg.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateSettings {
    /// Passes over the shuffled buffer (the epoch count).
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct UpdateReport {
    /// Target per buffer entry, fixed for the whole call.
    pub targets: Vec<f64>,
    pub minibatches_per_epoch: usize,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// `round(len / batch)` with halves rounded up.
pub fn minibatch_count(len: usize, batch: usize) -> usize {
    (len as f64 / batch as f64).round() as usize
}

const TARGET_CHUNK: usize = 512;

fn stack_states<'a>(items: impl Iterator<Item = &'a Tensor>, spec: &NetworkSpec) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for t in items {
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.input_shape);
    Tensor::new(shape, data)
}

/// Targets for every buffer entry under frozen parameters.
pub fn compute_targets(
    spec: &NetworkSpec,
    frozen: &LayerWeights,
    buffer: &ReplayBuffer,
    quant: Option<&QuantConfig>,
    cfg: &GioConfig,
) -> Result<Vec<f64>> {
    let net = Prepared::new(spec, frozen, quant, None)?;
    let actions = spec.output_len();
    let items: Vec<&Transition> = buffer.iter().collect();
    let mut targets = Vec::with_capacity(items.len());
    for chunk in items.chunks(TARGET_CHUNK) {
        let s = net.infer(spec, &stack_states(chunk.iter().map(|t| t.state.as_ref()), spec)?)?;
        let s2 = net.infer(spec, &stack_states(chunk.iter().map(|t| t.next_state.as_ref()), spec)?)?;
        for (i, t) in chunk.iter().enumerate() {
            if t.action >= actions {
                return Err(Error::usage(format!("action {} out of range", t.action)));
            }
            let ps = &s.data()[i * actions..(i + 1) * actions];
            let pn = &s2.data()[i * actions..(i + 1) * actions];
            targets.push(gio_target(t, ps, pn, cfg));
        }
    }
    Ok(targets)
}

/// One network update over the replay buffer.
///
/// Freezes the current weights as the target network, then for each epoch
/// shuffles the buffer and sweeps `round(|D| / B)` minibatches. Each
/// minibatch re-quantizes the shadow weights with training noise (when
/// `quant` is set), regresses `P(s, a)` toward the frozen targets under the
/// mean squared loss `0.5 (target - P)^2`, and takes one optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn update_network<R: Rng>(
    spec: &NetworkSpec,
    weights: &mut LayerWeights,
    optimizer: &mut OptimizerState,
    buffer: &ReplayBuffer,
    quant: Option<&QuantConfig>,
    cfg: &GioConfig,
    settings: UpdateSettings,
    rng: &mut R,
) -> Result<UpdateReport> {
    if buffer.is_empty() {
        return Err(Error::usage("update_network called with an empty replay buffer"));
    }
    if settings.batch_size == 0 {
        return Err(Error::config("minibatch size must be >= 1"));
    }
    cfg.validate()?;
    let frozen = weights.clone();
    let targets = compute_targets(spec, &frozen, buffer, quant, cfg)?;
    let n = buffer.len();
    let batches = minibatch_count(n, settings.batch_size);
    let actions = spec.output_len();
    let in_len = spec.input_len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut used = 0;
        for k in 0..batches {
            let lo = settings.batch_size * k;
            let hi = (settings.batch_size * (k + 1)).min(n);
            if lo >= hi {
                break;
            }
            let idx = &order[lo..hi];
            let b = idx.len();
            let mut data = Vec::with_capacity(b * in_len);
            for &i in idx {
                data.extend_from_slice(buffer.items[i].state.data());
            }
            let mut shape = vec![b];
            shape.extend_from_slice(&spec.input_shape);
            let input = Tensor::new(shape, data)?;
            let prepared = match quant {
                Some(q) => Prepared::new(spec, weights, Some(q), Some(rng as &mut dyn rand::RngCore))?,
                None => Prepared::new(spec, weights, None, None)?,
            };
            let (out, cache) = prepared.train_forward(spec, &input)?;
            let mut grad = vec![0.0; b * actions];
            let mut loss = 0.0;
            for (row, &i) in idx.iter().enumerate() {
                let a = buffer.items[i].action;
                let err = out.data()[row * actions + a] - targets[i];
                loss += 0.5 * err * err;
                grad[row * actions + a] = err / b as f64;
            }
            let grads = backward(spec, weights, &cache, &Tensor::new(vec![b, actions], grad)?)?;
            optimizer_step(weights, &grads, optimizer)?;
            loss_sum += loss / b as f64;
            used += 1;
        }
        epoch_losses.push(if used > 0 { loss_sum / used as f64 } else { 0.0 });
    }
    debug_assert!(weights.is_finite());
    Ok(UpdateReport {
        targets,
        minibatches_per_epoch: batches,
        epoch_losses,
    })
}
