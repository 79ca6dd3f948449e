use serde::{Deserialize, Serialize};

use super::network::LayerWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }
}

/// Adaptive-moment accumulators mirroring a [`LayerWeights`] layout.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(weights: &LayerWeights, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = weights.params().map(|p| vec![0.0; p.len()]).collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

pub fn optimizer_step(weights: &mut LayerWeights, grads: &LayerWeights, state: &mut OptimizerState) -> Result<()> {
    let shapes_match = weights.params().count() == state.first.len()
        && grads.params().count() == state.first.len()
        && weights
            .params()
            .zip(grads.params())
            .zip(&state.first)
            .all(|((w, g), m)| w.len() == g.len() && g.len() == m.len());
    if !shapes_match {
        return Err(Error::config("optimizer state does not match weights"));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    for (((w, g), m), v) in weights
        .params_mut()
        .zip(grads.params())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..w.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            w[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    Ok(())
}
