use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Dynamics, Spaces};
use crate::config::ParamTree;
use crate::error::Result;

pub const SIGMA: f64 = 10.0;
pub const RHO: f64 = 28.0;
pub const BETA: f64 = 8.0 / 3.0;
pub const DT: f64 = 0.01;
pub const SUBSTEPS: usize = 5;
pub const MAX_CONTROL: f64 = 5.0;
const BURN_IN: usize = 1000;

/// Lorenz system right-hand side with the control added to the y equation.
pub fn lorenz_derivative(s: [f64; 3], u: f64) -> [f64; 3] {
    [
        SIGMA * (s[1] - s[0]),
        s[0] * (RHO - s[2]) - s[1] + u,
        s[0] * s[1] - BETA * s[2],
    ]
}

fn rk4(s: [f64; 3], u: f64, dt: f64) -> [f64; 3] {
    let add =
        |a: [f64; 3], k: [f64; 3], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]];
    let k1 = lorenz_derivative(s, u);
    let k2 = lorenz_derivative(add(s, k1, 0.5 * dt), u);
    let k3 = lorenz_derivative(add(s, k2, 0.5 * dt), u);
    let k4 = lorenz_derivative(add(s, k3, dt), u);
    [
        s[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Controlled Lorenz attractor; rewarded for keeping `x` negative.
#[derive(Debug, Clone)]
pub struct Lorenz {
    pub state: [f64; 3],
    max_steps: usize,
}

impl Lorenz {
    pub fn new(max_steps: usize) -> Self {
        Self {
            state: [1.0, 1.0, 1.0],
            max_steps,
        }
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        Ok(Self::new(p.opt_usize("max_steps")?.unwrap_or(400)))
    }
}

impl Dynamics for Lorenz {
    fn spaces(&self) -> Spaces {
        Spaces {
            obs_dim: 3,
            action: ActionSpace::Continuous {
                lo: vec![-MAX_CONTROL],
                hi: vec![MAX_CONTROL],
            },
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut s = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(10.0..30.0),
        ];
        // settle onto the attractor
        for _ in 0..BURN_IN {
            s = rk4(s, 0.0, DT);
        }
        self.state = s;
        s.to_vec()
    }

    fn step(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let u = action[0].clamp(-MAX_CONTROL, MAX_CONTROL);
        for _ in 0..SUBSTEPS {
            self.state = rk4(self.state, u, DT);
        }
        let reward = if self.state[0] < 0.0 { 1.0 } else { -1.0 };
        (self.state.to_vec(), reward, false)
    }
}
