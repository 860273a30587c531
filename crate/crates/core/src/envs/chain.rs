use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Dynamics, Spaces};
use crate::config::ParamTree;
use crate::error::{Error, Result};

/// Ring of leaky channels driven by periodic disturbances, one actuator per channel:
/// `x_i' = -x_i + c (x_{i-1} + x_{i+1}) + a_i + A sin(w t + phi_i)`.
///
/// The global observation is the concatenation of every actuator's window of
/// `window` neighbouring channel states, centred on its own channel.
#[derive(Debug, Clone)]
pub struct Chain {
    pub x: Vec<f64>,
    pub t: f64,
    phases: Vec<f64>,
    n_act: usize,
    window: usize,
    coupling: f64,
    amplitude: f64,
    omega: f64,
    dt: f64,
    max_steps: usize,
}

impl Chain {
    pub fn new(n_act: usize, window: usize) -> Result<Self> {
        if n_act == 0 || window == 0 || window % 2 == 0 {
            return Err(Error::Invalid(
                "chain needs n_act >= 1 and an odd window".into(),
            ));
        }
        Ok(Self {
            x: vec![0.0; n_act],
            t: 0.0,
            phases: vec![0.0; n_act],
            n_act,
            window,
            coupling: 0.25,
            amplitude: 1.0,
            omega: 0.5,
            dt: 0.1,
            max_steps: 100,
        })
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        let mut c = Self::new(
            p.opt_usize("n_act")?.unwrap_or(10),
            p.opt_usize("window")?.unwrap_or(3),
        )?;
        if let Some(v) = p.opt_f64("coupling")? {
            c.coupling = v;
        }
        if let Some(v) = p.opt_f64("amplitude")? {
            c.amplitude = v;
        }
        if let Some(v) = p.opt_f64("omega")? {
            c.omega = v;
        }
        if let Some(v) = p.opt_f64("dt")? {
            c.dt = v;
        }
        if let Some(v) = p.opt_usize("max_steps")? {
            c.max_steps = v;
        }
        Ok(c)
    }

    pub fn n_act(&self) -> usize {
        self.n_act
    }

    pub fn disturbance(&self, i: usize) -> f64 {
        self.amplitude * (self.omega * self.t + self.phases[i]).sin()
    }

    fn neighbour(&self, i: usize, offset: isize) -> f64 {
        let n = self.n_act as isize;
        self.x[((i as isize + offset).rem_euclid(n)) as usize]
    }

    pub fn observation(&self) -> Vec<f64> {
        let half = (self.window / 2) as isize;
        (0..self.n_act)
            .flat_map(|i| (-half..=half).map(move |o| (i, o)))
            .map(|(i, o)| self.neighbour(i, o))
            .collect()
    }

    pub fn reward(&self) -> f64 {
        -self.x.iter().map(|v| v.abs()).sum::<f64>() / self.n_act as f64
    }
}

impl Dynamics for Chain {
    fn spaces(&self) -> Spaces {
        Spaces {
            obs_dim: self.n_act * self.window,
            action: ActionSpace::Continuous {
                lo: vec![-1.0; self.n_act],
                hi: vec![1.0; self.n_act],
            },
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.t = 0.0;
        for i in 0..self.n_act {
            self.x[i] = rng.random_range(-0.5..0.5);
            self.phases[i] = rng.random_range(0.0..2.0 * PI);
        }
        self.observation()
    }

    fn step(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let rates: Vec<f64> = (0..self.n_act)
            .map(|i| {
                -self.x[i]
                    + self.coupling * (self.neighbour(i, -1) + self.neighbour(i, 1))
                    + action[i].clamp(-1.0, 1.0)
                    + self.disturbance(i)
            })
            .collect();
        for (x, r) in self.x.iter_mut().zip(rates) {
            *x += self.dt * r;
        }
        self.t += self.dt;
        (self.observation(), self.reward(), false)
    }

    fn local_obs_dim(&self) -> Option<usize> {
        Some(self.window)
    }
}
