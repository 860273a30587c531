use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Dynamics, Spaces};
use crate::config::ParamTree;
use crate::error::Result;

pub const G: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;

/// Torque-limited pendulum swing-up; angle 0 is upright.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub theta: f64,
    pub theta_dot: f64,
    max_steps: usize,
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(max_steps: usize) -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            max_steps,
        }
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        Ok(Self::new(p.opt_usize("max_steps")?.unwrap_or(200)))
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Dynamics for Pendulum {
    fn spaces(&self) -> Spaces {
        Spaces {
            obs_dim: 3,
            action: ActionSpace::Continuous {
                lo: vec![-MAX_TORQUE],
                hi: vec![MAX_TORQUE],
            },
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.observation()
    }

    fn step(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = angle_normalize(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let acc = 3.0 * G / (2.0 * LENGTH) * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        (self.observation(), -cost, false)
    }
}
