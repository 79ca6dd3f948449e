use rand::Rng;

use crate::quant;

/// Binary spike events per input node over the simulation window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrains {
    window: usize,
    trains: Vec<Vec<bool>>,
}

impl SpikeTrains {
    pub fn new(window: usize, trains: Vec<Vec<bool>>) -> Self {
        assert!(
            trains.iter().all(|t| t.len() == window),
            "train length must equal window"
        );
        SpikeTrains { window, trains }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn nodes(&self) -> usize {
        self.trains.len()
    }

    pub fn train(&self, node: usize) -> &[bool] {
        &self.trains[node]
    }

    pub fn spike_count(&self, node: usize) -> usize {
        self.trains[node].iter().filter(|s| **s).count()
    }

    /// Indices of nodes firing at `step`.
    pub fn active_at(&self, step: usize) -> impl Iterator<Item = usize> + '_ {
        self.trains
            .iter()
            .enumerate()
            .filter_map(move |(i, t)| t[step].then_some(i))
    }

    pub fn step_lists(&self) -> Vec<Vec<usize>> {
        (0..self.window).map(|t| self.active_at(t).collect()).collect()
    }
}

/// Quantized level `q` in `0..=L` of a value (clamped to `[0, 1]`).
pub fn level(x: f64, bits: u32) -> u64 {
    (quant::quantize_unit(x, bits) * quant::levels(bits)).round() as u64
}

/// Deterministic rate code: a node at level `q` fires `q * multiplier` times in a
/// window of `L * multiplier` steps, spaced evenly from the front of the window
/// (a spike at step `t` iff `ceil(t c / W)` increases).
pub fn encode_input(observation: &[f64], bits: u32, multiplier: usize) -> SpikeTrains {
    let l = quant::levels(bits) as u64;
    let window = (l as usize) * multiplier.max(1);
    let w = window as u64;
    let trains = observation
        .iter()
        .map(|&x| {
            let count = level(x, bits) * multiplier.max(1) as u64;
            let ceil = |t: u64| (t * count).div_ceil(w);
            (1..=w).map(|t| ceil(t) > ceil(t - 1)).collect()
        })
        .collect();
    SpikeTrains { window, trains }
}

/// Bernoulli rate code with per-step firing probability `q / L`.
pub fn encode_poisson<R: Rng + ?Sized>(observation: &[f64], bits: u32, multiplier: usize, rng: &mut R) -> SpikeTrains {
    let l = quant::levels(bits);
    let window = (l as usize) * multiplier.max(1);
    let trains = observation
        .iter()
        .map(|&x| {
            let p = level(x, bits) as f64 / l;
            (0..window).map(|_| rng.random::<f64>() < p).collect()
        })
        .collect();
    SpikeTrains { window, trains }
}
