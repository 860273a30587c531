use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Dynamics, Spaces};
use crate::config::ParamTree;
use crate::error::Result;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const HALF_LENGTH: f64 = 0.5;
const FORCE: f64 = 10.0;
const DT: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

/// Pole balanced on a cart pushed left (action 0) or right (action 1).
#[derive(Debug, Clone)]
pub struct CartPole {
    /// `[x, x_dot, theta, theta_dot]`
    pub state: [f64; 4],
    max_steps: usize,
}

impl CartPole {
    pub fn new(max_steps: usize) -> Self {
        Self {
            state: [0.0; 4],
            max_steps,
        }
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        Ok(Self::new(p.opt_usize("max_steps")?.unwrap_or(500)))
    }
}

impl Dynamics for CartPole {
    fn spaces(&self) -> Spaces {
        Spaces {
            obs_dim: 4,
            action: ActionSpace::Discrete(2),
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        for s in &mut self.state {
            *s = rng.random_range(-0.05..0.05);
        }
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action[0] >= 0.5 { FORCE } else { -FORCE };
        let total_mass = MASS_CART + MASS_POLE;
        let pole_ml = MASS_POLE * HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
        self.state = [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];
        let failed = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        (self.state.to_vec(), 1.0, failed)
    }
}
