//! Stochastic policy heads.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Squashed actions are kept strictly inside (-1, 1).
pub const TANH_CLAMP: f64 = 1.0 - 1e-7;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian with clamped log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean and log_std dims differ");
        let log_std = log_std.into_iter().map(clamp_log_std).collect();
        Self { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((&m, &ls), &a)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|&ls| ls + 0.5 + HALF_LN_2PI).sum()
    }

    /// Draws `mean + std * eps` and returns it with its standard-normal noise.
    pub fn sample_with_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let eps: Vec<f64> = (0..self.dim())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let action = self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(&eps)
            .map(|((&m, &ls), &e)| m + ls.exp() * e)
            .collect();
        (action, eps)
    }

    pub fn sample_logprob<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let (action, eps) = self.sample_with_noise(rng);
        let logp = eps
            .iter()
            .zip(&self.log_std)
            .map(|(&e, &ls)| -0.5 * e * e - ls - HALF_LN_2PI)
            .sum();
        (action, logp)
    }

    /// Squashed sample `tanh(u)` with the change-of-variables correction.
    pub fn tanh_sample_logprob<R: Rng + ?Sized>(&self, rng: &mut R) -> TanhSample {
        let (pre_tanh, eps) = self.sample_with_noise(rng);
        let gauss_logp: f64 = eps
            .iter()
            .zip(&self.log_std)
            .map(|(&e, &ls)| -0.5 * e * e - ls - HALF_LN_2PI)
            .sum();
        let logp = gauss_logp - pre_tanh.iter().map(|&u| log1m_tanh_sq(u)).sum::<f64>();
        let action = pre_tanh.iter().map(|&u| squash(u)).collect();
        TanhSample {
            action,
            logp,
            pre_tanh,
            eps,
        }
    }
}

/// Result of a tanh-squashed Gaussian draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhSample {
    pub action: Vec<f64>,
    pub logp: f64,
    pub pre_tanh: Vec<f64>,
    pub eps: Vec<f64>,
}

pub fn clamp_log_std(ls: f64) -> f64 {
    ls.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// `tanh(u)` clamped to `±TANH_CLAMP`.
pub fn squash(u: f64) -> f64 {
    u.tanh().clamp(-TANH_CLAMP, TANH_CLAMP)
}

/// `ln(1 - tanh(u)^2)` in the overflow-free form `2 (ln 2 - u - softplus(-2u))`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Density of a standard normal, used by the tests as a reference.
pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

/// Categorical distribution over `k` actions given by logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: Vec<f64>) -> Self {
        assert!(!logits.is_empty(), "categorical over zero actions");
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_z = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|&l| l - log_z).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Self {
            logits,
            probs,
            log_probs,
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
    }

    pub fn mode(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left the cumulative sum just below 1
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Sample with its log-probability and the distribution entropy.
    pub fn sample_logprob_entropy<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64, f64) {
        let a = self.sample(rng);
        (a, self.log_prob(a), self.entropy())
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform action with probability `eps`, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    assert!(!q.is_empty(), "epsilon-greedy over zero actions");
    let u: f64 = rng.random();
    if u < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}
