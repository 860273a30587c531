use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dynamics, Spaces};
use crate::config::ParamTree;
use crate::error::{Error, Result};

/// Embeds the observation of an inner task in a higher dimension: a fixed
/// random linear map onto `dim` channels followed by `noise_dims` channels of
/// Gaussian noise redrawn on every step.
pub struct Lifted {
    inner: Box<dyn Dynamics>,
    // dim x inner obs_dim, row-major
    map: Vec<f64>,
    dim: usize,
    noise_dims: usize,
    noise: Normal<f64>,
}

impl Lifted {
    pub fn new(
        inner: Box<dyn Dynamics>,
        dim: usize,
        noise_dims: usize,
        noise_std: f64,
        map_seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("lift needs dim >= 1".into()));
        }
        let noise = Normal::new(0.0, noise_std).map_err(|_| {
            Error::Invalid(format!(
                "lift noise_std = {noise_std} is not a valid deviation"
            ))
        })?;
        let d = inner.spaces().obs_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(map_seed);
        let scale = 1.0 / (d as f64).sqrt();
        let map = (0..dim * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Ok(Self {
            inner,
            map,
            dim,
            noise_dims,
            noise,
        })
    }

    /// Reads `dim`, `noise` (channel count), `noise_std` and `seed`.
    pub fn from_params(inner: Box<dyn Dynamics>, p: &ParamTree) -> Result<Self> {
        Self::new(
            inner,
            p.opt_usize("dim")?.unwrap_or(64),
            p.opt_usize("noise")?.unwrap_or(0),
            p.opt_f64("noise_std")?.unwrap_or(0.01),
            p.opt_usize("seed")?.unwrap_or(0) as u64,
        )
    }

    pub fn map_matrix(&self) -> &[f64] {
        &self.map
    }

    fn lift(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = obs.len();
        let mut out: Vec<f64> = (0..self.dim)
            .map(|i| {
                self.map[i * d..(i + 1) * d]
                    .iter()
                    .zip(obs)
                    .map(|(m, o)| m * o)
                    .sum()
            })
            .collect();
        out.extend((0..self.noise_dims).map(|_| self.noise.sample(rng)));
        out
    }
}

impl Dynamics for Lifted {
    fn spaces(&self) -> Spaces {
        Spaces {
            obs_dim: self.dim + self.noise_dims,
            action: self.inner.spaces().action,
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.inner.max_episode_steps()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let obs = self.inner.reset(rng);
        self.lift(&obs, rng)
    }

    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let (obs, reward, terminal) = self.inner.step(action, rng);
        (self.lift(&obs, rng), reward, terminal)
    }
}
