use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
const X_LIMIT: f64 = 2.4;

/// Normalization half-ranges for position, velocity, angle and angular velocity.
const OBS_RANGE: [f64; 4] = [2.4, 3.0, 0.21, 3.5];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    /// One semi-implicit Euler step under a horizontal push of `force` newtons.
    pub fn advance(self, force: f64) -> Self {
        let (sin, cos) = self.theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * self.theta_dot * self.theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        let x_dot = self.x_dot + TAU * x_acc;
        let theta_dot = self.theta_dot + TAU * theta_acc;
        CartPoleState {
            x: self.x + TAU * x_dot,
            x_dot,
            theta: self.theta + TAU * theta_dot,
            theta_dot,
        }
    }

    pub fn failed(&self) -> bool {
        self.theta.abs() > THETA_LIMIT || self.x.abs() > X_LIMIT
    }

    /// Each component mapped affinely into `[0, 1]` and clamped.
    pub fn normalized(&self) -> [f64; 4] {
        let raw = [self.x, self.x_dot, self.theta, self.theta_dot];
        std::array::from_fn(|i| (raw[i] / (2.0 * OBS_RANGE[i]) + 0.5).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleConfig {
    pub max_steps: usize,
    /// Half-width of the uniform initial-state distribution.
    pub init_range: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig {
            max_steps: 100,
            init_range: 0.05,
        }
    }
}

/// Pole balancing on a cart; action 0 pushes left, 1 pushes right.
#[derive(Debug, Clone)]
pub struct CartPole {
    config: CartPoleConfig,
    state: CartPoleState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Self {
        CartPole {
            config,
            state: CartPoleState::default(),
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Start from an explicit physical state.
    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }
}

impl Environment for CartPole {
    fn reset(&mut self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.config.init_range;
        let mut draw = || if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let state = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.set_state(state);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::usage("cartpole stepped after the episode ended"));
        }
        let force = match action {
            0 => -FORCE,
            1 => FORCE,
            _ => return Err(Error::usage(format!("cartpole action {action} out of range"))),
        };
        self.state = self.state.advance(force);
        self.steps += 1;
        let terminal = self.state.failed();
        let truncated = !terminal && self.steps >= self.config.max_steps;
        self.done = terminal || truncated;
        Ok(Step {
            observation: self.observation(),
            reward: if terminal { 0.0 } else { 1.0 },
            terminal,
            truncated,
        })
    }

    fn observation(&self) -> Tensor {
        Tensor::from_vec(self.state.normalized().to_vec())
    }

    fn action_count(&self) -> usize {
        2
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![4]
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_from_rest() {
        let s = CartPoleState::default().advance(FORCE);
        assert!((s.x_dot - 0.195_121_951_219_512_2).abs() < 1e-12);
        assert!((s.theta_dot + 0.292_682_926_829_268_3).abs() < 1e-12);
        assert!((s.x - 0.02 * s.x_dot).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_centered() {
        assert_eq!(CartPoleState::default().normalized(), [0.5; 4]);
        let far = CartPoleState {
            x: 100.0,
            x_dot: -100.0,
            theta: 0.0,
            theta_dot: 0.0,
        };
        assert_eq!(far.normalized()[..2], [1.0, 0.0]);
    }

    #[test]
    fn episode_cap_truncates() {
        let mut env = CartPole::new(CartPoleConfig {
            max_steps: 3,
            init_range: 0.0,
        });
        env.reset(0);
        let mut last = None;
        for a in [0, 1, 0] {
            last = Some(env.step(a).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminal);
        assert_eq!(last.reward, 1.0);
        assert!(matches!(env.step(0), Err(Error::Usage(_))));
    }

    #[test]
    fn failure_is_terminal_with_no_reward() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset(0);
        let mut step = env.step(1).unwrap();
        while !step.done() {
            step = env.step(1).unwrap();
        }
        assert!(step.terminal);
        assert_eq!(step.reward, 0.0);
    }

    #[test]
    fn invalid_action() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset(1);
        assert!(env.step(2).is_err());
    }
}
