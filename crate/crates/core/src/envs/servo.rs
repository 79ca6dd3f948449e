use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Ball tracking with a sliding camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub field_width: usize,
    pub field_height: usize,
    /// Side of the square camera frame.
    pub frame_size: usize,
    pub ball_radius: f64,
    /// Horizontal sinusoid of the target: amplitude (px), period (steps), phase (rad).
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
    /// Horizontal shifts in pixels, one per action.
    pub moves: Vec<i64>,
    pub agent_start: i64,
    /// Centre of the target's oscillation.
    pub target_center: f64,
    pub max_steps: usize,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            field_width: 160,
            field_height: 84,
            frame_size: 84,
            ball_radius: 8.0,
            amplitude: 30.0,
            period: 40.0,
            phase: 0.0,
            moves: vec![-4, -2, -1, 0, 1, 2, 4],
            agent_start: 80,
            target_center: 80.0,
            max_steps: 50,
        }
    }
}

impl ServoConfig {
    /// Scaled-down field for single-core runs.
    pub fn desk() -> Self {
        ServoConfig {
            field_width: 48,
            field_height: 24,
            frame_size: 24,
            ball_radius: 3.0,
            amplitude: 9.0,
            period: 40.0,
            phase: 0.0,
            moves: vec![-4, -2, -1, 0, 1, 2, 4],
            agent_start: 24,
            target_center: 24.0,
            max_steps: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.frame_size > self.field_width || self.frame_size > self.field_height {
            return Err(Error::config(format!(
                "frame {} does not fit field {}x{}",
                self.frame_size, self.field_width, self.field_height
            )));
        }
        if self.moves.is_empty() {
            return Err(Error::config("servo needs at least one move"));
        }
        if self.period.is_nan() || self.period <= 0.0 || self.ball_radius.is_nan() || self.ball_radius < 0.0 {
            return Err(Error::config("servo period must be positive and radius non-negative"));
        }
        Ok(())
    }

    fn agent_limits(&self) -> (i64, i64) {
        let half = (self.frame_size / 2) as i64;
        (half, (self.field_width - self.frame_size) as i64 + half)
    }
}

#[derive(Debug, Clone)]
pub struct Servo {
    config: ServoConfig,
    agent_x: i64,
    target_x: f64,
    step: usize,
    done: bool,
    /// Oldest first.
    frames: [Vec<f64>; 3],
}

impl Servo {
    pub fn new(config: ServoConfig) -> Result<Self> {
        config.validate()?;
        let mut env = Servo {
            config,
            agent_x: 0,
            target_x: 0.0,
            step: 0,
            done: false,
            frames: Default::default(),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &ServoConfig {
        &self.config
    }

    pub fn agent_x(&self) -> i64 {
        self.agent_x
    }

    pub fn target_x(&self) -> f64 {
        self.target_x
    }

    fn target_at(&self, step: usize) -> f64 {
        let c = &self.config;
        c.target_center + c.amplitude * (2.0 * std::f64::consts::PI * step as f64 / c.period + c.phase).sin()
    }

    fn row(&self) -> f64 {
        (self.config.field_height / 2) as f64
    }

    /// Place agent and target explicitly; the history is refilled with the current frame.
    pub fn place(&mut self, agent_x: i64, target_x: f64) {
        let (lo, hi) = self.config.agent_limits();
        self.agent_x = agent_x.clamp(lo, hi);
        self.target_x = target_x;
        let f = self.render();
        self.frames = [f.clone(), f.clone(), f];
    }

    /// Current camera frame, row-major, `frame_size` squared.
    pub fn render(&self) -> Vec<f64> {
        let n = self.config.frame_size;
        let left = self.agent_x - (n / 2) as i64;
        let top = (self.config.field_height / 2) as i64 - (n / 2) as i64;
        let r2 = self.config.ball_radius * self.config.ball_radius;
        let ty = self.row();
        let mut frame = vec![0.0; n * n];
        for i in 0..n {
            let dy = (top + i as i64) as f64 - ty;
            for j in 0..n {
                let dx = (left + j as i64) as f64 - self.target_x;
                if dx * dx + dy * dy <= r2 {
                    frame[i * n + j] = 1.0;
                }
            }
        }
        frame
    }

    pub fn distance(&self) -> f64 {
        (self.agent_x as f64 - self.target_x).abs()
    }

    /// Newest frame as a binary PGM image.
    pub fn dump_frame(&self, path: &Path) -> Result<()> {
        let n = self.config.frame_size;
        write_pgm(path, &self.frames[2], n, n)
    }
}

impl Environment for Servo {
    fn reset(&mut self, _seed: u64) -> Tensor {
        self.step = 0;
        self.done = false;
        let target = self.target_at(0);
        self.place(self.config.agent_start, target);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::usage("servo stepped after the episode ended"));
        }
        let Some(&shift) = self.config.moves.get(action) else {
            return Err(Error::usage(format!("servo action {action} out of range")));
        };
        let (lo, hi) = self.config.agent_limits();
        self.agent_x = (self.agent_x + shift).clamp(lo, hi);
        self.step += 1;
        self.target_x = self.target_at(self.step);
        self.frames.rotate_left(1);
        self.frames[2] = self.render();
        let truncated = self.step >= self.config.max_steps;
        self.done = truncated;
        Ok(Step {
            observation: self.observation(),
            reward: -self.distance(),
            terminal: false,
            truncated,
        })
    }

    fn observation(&self) -> Tensor {
        let n = self.config.frame_size;
        let data = self.frames.concat();
        Tensor::new(vec![3, n, n], data).expect("frame history shape")
    }

    fn action_count(&self) -> usize {
        self.config.moves.len()
    }

    fn observation_shape(&self) -> Vec<usize> {
        let n = self.config.frame_size;
        vec![3, n, n]
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

/// Write a grayscale image with values in `[0, 1]` as binary PGM.
pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::usage(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(pixels.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend(pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}
