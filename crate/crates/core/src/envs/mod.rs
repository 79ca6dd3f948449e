//! Simulation tasks and the episode runner.

mod cartpole;
mod servo;

pub use cartpole::{CartPole, CartPoleConfig, CartPoleState};
pub use servo::{write_pgm, Servo, ServoConfig};

use std::sync::Arc;

use rand::Rng;

use crate::cvi::{select_action, Transition};
use crate::error::Result;
use crate::nn::Tensor;

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Tensor,
    pub reward: f64,
    /// Failure state reached; the value of the next state is not bootstrapped.
    pub terminal: bool,
    /// Step cap reached without failure.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    /// Start a new episode from `seed` and return the first observation.
    fn reset(&mut self, seed: u64) -> Tensor;
    /// Advance one step. Stepping a finished episode is a usage error.
    fn step(&mut self, action: usize) -> Result<Step>;
    fn observation(&self) -> Tensor;
    fn action_count(&self) -> usize;
    fn observation_shape(&self) -> Vec<usize>;
    /// Episode length cap.
    fn max_steps(&self) -> usize;
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub terminated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Roll out at most `steps` steps from the environment's current state.
///
/// `policy` maps an observation to action preferences. Actions are drawn
/// from the softmax at inverse temperature `beta`, or greedily.
pub fn run_episode<E, P, R>(
    env: &mut E,
    mut policy: P,
    steps: usize,
    beta: f64,
    rng: &mut R,
    greedy: bool,
) -> Result<Episode>
where
    E: Environment + ?Sized,
    P: FnMut(&Tensor) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    let mut episode = Episode::default();
    let mut obs = Arc::new(env.observation());
    for _ in 0..steps {
        let prefs = policy(&obs)?;
        let action = select_action(&prefs, beta, rng, greedy);
        let step = env.step(action)?;
        let next = Arc::new(step.observation);
        episode.total_reward += step.reward;
        episode.transitions.push(Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: Arc::clone(&next),
            terminal: step.terminal,
        });
        obs = next;
        if step.terminal || step.truncated {
            episode.terminated = step.terminal;
            break;
        }
    }
    Ok(episode)
}
