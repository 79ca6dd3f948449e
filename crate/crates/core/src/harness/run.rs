use std::time::Instant;

use log::{debug, info};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::cvi::{argmax, update_network, ReplayBuffer, Transition, UpdateSettings};
use crate::envs::run_episode;
use crate::error::{Error, Result};
use crate::nn::{init_weights, AdamConfig, LayerWeights, NetworkSpec, OptimizerState, Prepared, Tensor};
use crate::quant::QuantConfig;
use crate::snn::{convert, SpikingNetwork};

/// One iteration of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub seed: u64,
    /// Counted from 1.
    pub iteration: usize,
    pub episode_rewards: Vec<f64>,
    pub mean_reward: f64,
    /// `None` when the method samples without a spiking network.
    pub agreement_rate: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub weights: LayerWeights,
}

impl SeedRun {
    /// Mean of `mean_reward` over the last `n` iterations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len() as f64
    }

    pub fn mean_agreement(&self) -> Option<f64> {
        let rates: Vec<f64> = self.records.iter().filter_map(|r| r.agreement_rate).collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    /// Seed mean of each run's `tail_mean(n)`.
    pub fn tail_mean(&self, n: usize) -> f64 {
        self.runs.iter().map(|r| r.tail_mean(n)).sum::<f64>() / self.runs.len() as f64
    }
}

/// Fraction of observations on which the trained network and the spiking
/// network pick the same greedy action (lowest index on ties, both sides).
pub fn agreement_rate(
    spec: &NetworkSpec,
    weights: &LayerWeights,
    quant: Option<&QuantConfig>,
    snn: &mut SpikingNetwork,
    observations: &[Tensor],
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::usage("agreement rate needs at least one observation"));
    }
    let snn_prefs: Vec<Vec<f64>> = observations.iter().map(|o| snn.infer(o.data())).collect();
    agreement_with(spec, weights, quant, observations, &snn_prefs)
}

fn agreement_with(
    spec: &NetworkSpec,
    weights: &LayerWeights,
    quant: Option<&QuantConfig>,
    observations: &[Tensor],
    snn_prefs: &[Vec<f64>],
) -> Result<f64> {
    let net = Prepared::new(spec, weights, quant, None)?;
    let actions = spec.output_len();
    let mut agree = 0;
    for (chunk, prefs) in observations.chunks(512).zip(snn_prefs.chunks(512)) {
        let out = net.infer(spec, &Tensor::stack(chunk)?)?;
        for (i, p) in prefs.iter().enumerate() {
            let row = &out.data()[i * actions..(i + 1) * actions];
            agree += (argmax(row) == argmax(p)) as usize;
        }
    }
    Ok(agree as f64 / observations.len() as f64)
}

/// The sample/update loop for a single seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let spec = cfg.network_spec()?;
    let flags = cfg.flags();
    let train_quant = cfg.training_quant();
    let snn_quant = cfg.snn_quant();
    let gio = cfg.gio();
    let settings = UpdateSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
    };
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = init_weights(&spec, master.next_u64());
    let mut env_seeds = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut action_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut optimizer = OptimizerState::new(&weights, AdamConfig::with_lr(cfg.learning_rate));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut env = cfg.make_env()?;
    let mut records = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        let started = Instant::now();
        let mut snn = if flags.converted {
            let mut s = convert(&spec, &weights, &snn_quant)?;
            s.window_multiplier = cfg.window_multiplier;
            Some(s)
        } else {
            None
        };
        let sampler = if snn.is_none() {
            Some(Prepared::new(&spec, &weights, train_quant.as_ref(), None)?)
        } else {
            None
        };
        let mut episode_rewards = Vec::with_capacity(cfg.episodes);
        let mut transitions: Vec<Transition> = Vec::new();
        let mut snn_prefs = Vec::new();
        for _ in 0..cfg.episodes {
            env.reset(env_seeds.next_u64());
            let policy = |obs: &Tensor| -> Result<Vec<f64>> {
                match (&mut snn, &sampler) {
                    (Some(s), _) => {
                        let p = s.infer(obs.data());
                        snn_prefs.push(p.clone());
                        Ok(p)
                    }
                    (None, Some(net)) => Ok(net.infer(&spec, obs)?.into_data()),
                    (None, None) => unreachable!("a sampling policy always exists"),
                }
            };
            let episode = run_episode(env.as_mut(), policy, cfg.steps, cfg.beta, &mut action_rng, false)?;
            episode_rewards.push(episode.total_reward);
            transitions.extend(episode.transitions);
        }
        let agreement_rate = if snn.is_some() && !transitions.is_empty() {
            let states: Vec<Tensor> = transitions.iter().map(|t| t.state.as_ref().clone()).collect();
            Some(agreement_with(
                &spec,
                &weights,
                train_quant.as_ref(),
                &states,
                &snn_prefs,
            )?)
        } else {
            None
        };
        if cfg.clear_buffer {
            buffer.clear();
        }
        buffer.extend(transitions.into_iter().map(|mut t| {
            t.reward *= cfg.reward_scale;
            t
        }));
        let report = update_network(
            &spec,
            &mut weights,
            &mut optimizer,
            &buffer,
            train_quant.as_ref(),
            &gio,
            settings,
            &mut update_rng,
        )?;
        let mean_reward = episode_rewards.iter().sum::<f64>() / episode_rewards.len() as f64;
        let record = MetricsRecord {
            seed,
            iteration,
            episode_rewards,
            mean_reward,
            agreement_rate,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        debug!(
            "{} seed {seed} iter {iteration}: reward {:.2} agreement {:?} loss {:?} ({:.1}s)",
            cfg.method,
            record.mean_reward,
            record.agreement_rate,
            report.epoch_losses.last(),
            record.wall_clock_secs
        );
        records.push(record);
    }
    Ok(SeedRun { seed, records, weights })
}

/// Every seed of `cfg`, in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed)?;
        info!(
            "{} k={} seed {seed}: last-5 mean reward {:.2}",
            cfg.method,
            cfg.bits,
            run.tail_mean(5)
        );
        runs.push(run);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
    })
}

pub const SWEEP_BITS: [u32; 5] = [2, 4, 8, 16, 32];

/// `run_experiment` at each bit width with the same seeds.
pub fn bit_sweep(cfg: &ExperimentConfig, bits: &[u32]) -> Result<Vec<ExperimentResult>> {
    let configs: Vec<ExperimentConfig> = bits
        .iter()
        .map(|&k| ExperimentConfig { bits: k, ..cfg.clone() })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    configs.iter().map(run_experiment).collect()
}
