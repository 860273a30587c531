use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{make_env, Env, Spaces, StepResult};
use crate::config::ParamTree;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Outcome of one synchronous step of every worker.
#[derive(Debug, Clone)]
pub struct PoolStep {
    /// Per-worker transition; `obs` is the true next observation, before any reset.
    pub results: Vec<StepResult>,
    /// Observations to act on next, with finished workers already reset.
    pub next_obs: Matrix<f64>,
}

/// Independent environment copies stepped in lock-step, with automatic reset.
#[derive(Debug)]
pub struct WorkerPool {
    workers: Vec<Env>,
    current: Matrix<f64>,
    parallel: bool,
}

/// Seeds for `n` workers drawn from one master stream.
pub fn worker_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

impl WorkerPool {
    pub fn new(
        name: &str,
        params: &ParamTree,
        n_envs: usize,
        seed: u64,
        parallel: bool,
    ) -> Result<Self> {
        if n_envs == 0 {
            return Err(Error::Invalid("a pool needs at least one worker".into()));
        }
        let workers = worker_seeds(seed, n_envs)
            .into_iter()
            .map(|s| make_env(name, params, s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_envs(workers, parallel)
    }

    pub fn from_envs(mut workers: Vec<Env>, parallel: bool) -> Result<Self> {
        let first = workers
            .first()
            .ok_or_else(|| Error::Invalid("empty pool".into()))?
            .spaces();
        if workers.iter().any(|w| w.spaces() != first) {
            return Err(Error::Invalid("pool workers disagree on spaces".into()));
        }
        let rows = workers
            .iter_mut()
            .map(Env::reset)
            .collect::<Result<Vec<_>>>()?;
        let current = Matrix::from_rows(&rows)?;
        Ok(Self {
            workers,
            current,
            parallel,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.workers.len()
    }

    pub fn spaces(&self) -> Spaces {
        self.workers[0].spaces()
    }

    pub fn max_episode_steps(&self) -> usize {
        self.workers[0].max_episode_steps()
    }

    pub fn local_obs_dim(&self) -> Option<usize> {
        self.workers[0].local_obs_dim()
    }

    /// Observations the next actions should be chosen from.
    pub fn observations(&self) -> &Matrix<f64> {
        &self.current
    }

    /// Resets every worker, discarding unfinished episodes.
    pub fn reset_all(&mut self) -> Result<&Matrix<f64>> {
        let rows = self
            .workers
            .iter_mut()
            .map(Env::reset)
            .collect::<Result<Vec<_>>>()?;
        self.current = Matrix::from_rows(&rows)?;
        Ok(&self.current)
    }

    /// Steps worker `i` with `actions[i]` (environment units).
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<PoolStep> {
        if actions.len() != self.workers.len() {
            return Err(Error::shape(format!(
                "{} actions for {} workers",
                actions.len(),
                self.workers.len()
            )));
        }
        let one = |(env, a): (&mut Env, &Vec<f64>)| -> Result<(StepResult, Vec<f64>)> {
            let r = env.step(a)?;
            let next = if r.done() {
                env.reset()?
            } else {
                r.obs.clone()
            };
            Ok((r, next))
        };
        let out: Vec<Result<(StepResult, Vec<f64>)>> = if self.parallel {
            self.workers
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(one)
                .collect()
        } else {
            self.workers
                .iter_mut()
                .zip(actions.iter())
                .map(one)
                .collect()
        };
        let (results, rows): (Vec<_>, Vec<_>) = out
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        self.current = Matrix::from_rows(&rows)?;
        Ok(PoolStep {
            results,
            next_obs: self.current.clone(),
        })
    }
}
