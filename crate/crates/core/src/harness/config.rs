use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cvi::GioConfig;
use crate::envs::{CartPole, CartPoleConfig, Environment, Servo, ServoConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkSpec};
use crate::quant::{QuantConfig, WeightMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cartpole,
    Servo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rivc,
    RivcNoGio,
    RivcNoQuantize,
    Drl2snn,
    FpnnCvi,
}

/// What a method switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodFlags {
    pub quantized_training: bool,
    pub gap_increasing: bool,
    pub converted: bool,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Rivc,
        Method::RivcNoGio,
        Method::RivcNoQuantize,
        Method::Drl2snn,
        Method::FpnnCvi,
    ];

    pub fn flags(self) -> MethodFlags {
        let (quantized_training, gap_increasing, converted) = match self {
            Method::Rivc => (true, true, true),
            Method::RivcNoGio => (true, false, true),
            Method::RivcNoQuantize => (false, true, true),
            Method::Drl2snn => (false, false, true),
            Method::FpnnCvi => (false, true, false),
        };
        MethodFlags {
            quantized_training,
            gap_increasing,
            converted,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rivc => "rivc",
            Method::RivcNoGio => "rivc_no_gio",
            Method::RivcNoQuantize => "rivc_no_quantize",
            Method::Drl2snn => "drl2snn",
            Method::FpnnCvi => "fpnn_cvi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Hidden stack; the output width comes from the task's action count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[out_channels, kernel, stride]` per convolution.
    #[serde(default)]
    pub convs: Vec<[usize; 3]>,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub method: Method,
    /// Training bit width `k` for weights and activations.
    pub bits: u32,
    /// Widest bit count the spiking target supports; policies are re-quantized to it.
    pub snn_max_bits: u32,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub episodes: usize,
    pub steps: usize,
    pub buffer_capacity: usize,
    pub clear_buffer: bool,
    pub seeds: Vec<u64>,
    pub learning_rate: f64,
    /// Multiplies rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub weight_map: WeightMap,
    pub window_multiplier: usize,
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servo: Option<ServoConfig>,
}

impl ExperimentConfig {
    /// Vector task, reduced epoch count and width for one core.
    pub fn cartpole(method: Method) -> Self {
        ExperimentConfig {
            task: Task::Cartpole,
            method,
            bits: 4,
            snn_max_bits: 8,
            sigma: 1.0,
            alpha: 0.99,
            beta: 1.0,
            gamma: 0.97,
            batch_size: 32,
            epochs: 40,
            iterations: 50,
            episodes: 10,
            steps: 100,
            buffer_capacity: 5000,
            clear_buffer: false,
            seeds: vec![0, 1, 2, 3, 4],
            learning_rate: 2e-4,
            reward_scale: 1.0,
            weight_map: WeightMap::Dorefa,
            window_multiplier: 1,
            network: NetworkConfig {
                convs: vec![],
                hidden: vec![64, 64],
            },
            servo: None,
        }
        .resolved()
    }

    /// Image task on the reduced field with a small convolutional stack.
    pub fn servo_desk(method: Method) -> Self {
        let servo = ServoConfig::desk();
        ExperimentConfig {
            task: Task::Servo,
            steps: servo.max_steps,
            iterations: 20,
            buffer_capacity: 5 * 10 * servo.max_steps,
            learning_rate: 1e-3,
            reward_scale: 0.05,
            network: NetworkConfig {
                convs: vec![[8, 5, 2], [16, 3, 2]],
                hidden: vec![64],
            },
            servo: Some(servo),
            ..ExperimentConfig::cartpole(method)
        }
        .resolved()
    }

    /// Full-size field and convolutional stack; hours per seed on one core.
    pub fn servo_full(method: Method) -> Self {
        let servo = ServoConfig::default();
        ExperimentConfig {
            epochs: 1000,
            iterations: 50,
            learning_rate: 1e-4,
            reward_scale: 1.0 / 60.0,
            network: NetworkConfig {
                convs: vec![[16, 7, 2], [32, 5, 2], [64, 5, 1], [64, 3, 1]],
                hidden: vec![256, 256],
            },
            servo: Some(servo),
            ..ExperimentConfig::servo_desk(method)
        }
        .resolved()
    }

    pub fn preset(name: &str, method: Method) -> Result<Self> {
        match name {
            "cartpole" => Ok(Self::cartpole(method)),
            "servo" | "servo_desk" => Ok(Self::servo_desk(method)),
            "servo_full" => Ok(Self::servo_full(method)),
            _ => Err(Error::config(format!("unknown preset {name:?}"))),
        }
    }

    /// Apply the method's forced settings.
    pub fn resolved(mut self) -> Self {
        if !self.method.flags().gap_increasing {
            self.alpha = 0.0;
        }
        if self.task == Task::Servo && self.servo.is_none() {
            self.servo = Some(ServoConfig::desk());
        }
        self
    }

    pub fn flags(&self) -> MethodFlags {
        self.method.flags()
    }

    pub fn gio(&self) -> GioConfig {
        GioConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    /// Quantization used while training, if the method trains quantized.
    pub fn training_quant(&self) -> Option<QuantConfig> {
        self.flags().quantized_training.then(|| self.quant(self.bits))
    }

    /// Bit width of the converted network.
    pub fn snn_bits(&self) -> u32 {
        self.bits.min(self.snn_max_bits)
    }

    pub fn snn_quant(&self) -> QuantConfig {
        self.quant(self.snn_bits())
    }

    fn quant(&self, bits: u32) -> QuantConfig {
        let mut q = QuantConfig::new(bits, self.sigma);
        q.weight_map = self.weight_map;
        q
    }

    pub fn make_env(&self) -> Result<Box<dyn Environment>> {
        Ok(match self.task {
            Task::Cartpole => Box::new(CartPole::new(CartPoleConfig {
                max_steps: self.steps,
                ..CartPoleConfig::default()
            })),
            Task::Servo => {
                let mut c = self.servo.clone().unwrap_or_else(ServoConfig::desk);
                c.max_steps = self.steps;
                Box::new(Servo::new(c)?)
            }
        })
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let env = self.make_env()?;
        let shape = env.observation_shape();
        let actions = env.action_count();
        let hidden = if self.flags().quantized_training {
            Activation::ReluQ
        } else {
            Activation::Relu
        };
        let mut dense = self.network.hidden.clone();
        dense.push(actions);
        let spec = if self.network.convs.is_empty() {
            let mut sizes = vec![shape.iter().product()];
            sizes.extend(dense);
            NetworkSpec::mlp(&sizes, hidden)
        } else {
            let [c, h, w] = shape[..] else {
                return Err(Error::config("convolutions need an image observation"));
            };
            let convs: Vec<(usize, usize, usize)> = self.network.convs.iter().map(|v| (v[0], v[1], v[2])).collect();
            NetworkSpec::conv_net([c, h, w], &convs, &dense, hidden)?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if *self != self.clone().resolved() {
            return Err(Error::config(format!(
                "method {} requires alpha = 0, got {}",
                self.method, self.alpha
            )));
        }
        self.quant(self.bits).validate()?;
        if !(1..=32).contains(&self.snn_max_bits) {
            return Err(Error::config("snn_max_bits outside 1..=32"));
        }
        self.gio().validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("episodes", self.episodes),
            ("steps", self.steps),
            ("buffer_capacity", self.buffer_capacity),
            ("window_multiplier", self.window_multiplier),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::config("reward_scale must be positive"));
        }
        if self.network.convs.iter().flatten().any(|v| *v == 0) || self.network.hidden.contains(&0) {
            return Err(Error::config("layer sizes must be >= 1"));
        }
        if self.task == Task::Cartpole && !self.network.convs.is_empty() {
            return Err(Error::config("cartpole observations are vectors; remove convs"));
        }
        self.network_spec()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parse a config file; keys left out fall back to the preset named by
    /// `preset` (or `task`) for the chosen method.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let method = match table.get("method") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::config(format!("method must be a string, got {v}"))),
            None => Method::Rivc,
        };
        let preset = match table.remove("preset") {
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(Error::config(format!("preset must be a string, got {v}"))),
            None => match table.get("task").and_then(|v| v.as_str()) {
                Some("servo") => "servo".to_string(),
                _ => "cartpole".to_string(),
            },
        };
        let base = Self::preset(&preset, method)?;
        let mut merged: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut merged, table);
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Recursive overlay of `top` onto `base`.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_force_flags() {
        for m in Method::ALL {
            for cfg in [ExperimentConfig::cartpole(m), ExperimentConfig::servo_desk(m)] {
                cfg.validate().unwrap();
                assert_eq!(cfg.alpha == 0.0, !m.flags().gap_increasing);
            }
        }
        let spec = ExperimentConfig::servo_full(Method::Rivc).network_spec().unwrap();
        assert_eq!(spec.output_len(), 7);
    }

    #[test]
    fn method_flags_are_distinct() {
        let flags: Vec<_> = Method::ALL.iter().map(|m| m.flags()).collect();
        for i in 0..flags.len() {
            for j in i + 1..flags.len() {
                assert_ne!(flags[i], flags[j]);
            }
        }
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let cfg = ExperimentConfig::servo_desk(Method::Drl2snn);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("method = \"rivc_no_gio\"\nbits = 8\n").unwrap();
        assert_eq!(partial.bits, 8);
        assert_eq!(partial.alpha, 0.0);
        assert_eq!(partial.task, Task::Cartpole);
        let servo = ExperimentConfig::from_toml("task = \"servo\"\n[servo]\nball_radius = 2.0\n").unwrap();
        assert_eq!(servo.servo.as_ref().unwrap().ball_radius, 2.0);
        assert_eq!(servo.servo.as_ref().unwrap().frame_size, 24);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ExperimentConfig::cartpole(Method::Rivc);
        c.bits = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::cartpole(Method::Drl2snn);
        c.alpha = 0.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::cartpole(Method::Rivc);
        c.seeds.clear();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("bogus_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("method = \"dqn\"").is_err());
    }

    #[test]
    fn snn_bits_are_capped() {
        let mut c = ExperimentConfig::cartpole(Method::Rivc);
        c.bits = 16;
        assert_eq!(c.snn_bits(), 8);
        assert_eq!(c.training_quant().unwrap().bits, 16);
        c.bits = 2;
        assert_eq!(c.snn_bits(), 2);
    }
}
