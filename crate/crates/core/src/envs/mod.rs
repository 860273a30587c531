//! Environment wrapper, transforms, the parallel worker pool and the built-in
//! control tasks.

mod cartpole;
mod chain;
mod lift;
mod lorenz;
mod pendulum;
mod pool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cartpole::CartPole;
pub use chain::Chain;
pub use lift::Lifted;
pub use lorenz::{lorenz_derivative, Lorenz};
pub use pendulum::Pendulum;
pub use pool::{worker_seeds, PoolStep, WorkerPool};

use crate::config::{Factory, ParamTree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { lo: Vec<f64>, hi: Vec<f64> },
}

impl ActionSpace {
    pub fn continuous(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::shape(
                "continuous bounds must be non-empty and equally sized",
            ));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Invalid(
                "continuous bounds need lo < hi element-wise".into(),
            ));
        }
        Ok(ActionSpace::Continuous { lo, hi })
    }

    /// Width of an action row as stored in buffers.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { lo, .. } => lo.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        match self {
            ActionSpace::Discrete(k) => {
                action.len() == 1
                    && action[0].fract() == 0.0
                    && action[0] >= 0.0
                    && (action[0] as usize) < *k
            }
            ActionSpace::Continuous { lo, hi } => {
                action.len() == lo.len()
                    && action
                        .iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(a, (l, h))| *a >= *l && *a <= *h)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spaces {
    pub obs_dim: usize,
    pub action: ActionSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Raw dynamics of a task, without time limit or observation transform.
pub trait Dynamics: Send {
    fn spaces(&self) -> Spaces;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Advances one control step; returns observation, reward and termination.
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool);
    /// Width of each actuator's local observation window, when the global
    /// observation is the concatenation of such windows.
    fn local_obs_dim(&self) -> Option<usize> {
        None
    }
}

/// Element-wise observation transform applied inside the wrapper.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsTransform {
    None,
    /// `(obs - lo) / (hi - lo)` mapped onto `[-1, 1]`
    Scale {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Clip {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl ObsTransform {
    pub fn from_params(params: &ParamTree) -> Result<Self> {
        let kind = params.str("kind")?;
        let bounds = || -> Result<(Vec<f64>, Vec<f64>)> {
            let (lo, hi) = (params.f64_list("lo")?, params.f64_list("hi")?);
            if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
                return Err(Error::Invalid(
                    "obs_transform needs equally sized lo < hi".into(),
                ));
            }
            Ok((lo, hi))
        };
        Ok(match kind.as_str() {
            "none" => ObsTransform::None,
            "scale" => {
                let (lo, hi) = bounds()?;
                ObsTransform::Scale { lo, hi }
            }
            "clip" => {
                let (lo, hi) = bounds()?;
                ObsTransform::Clip { lo, hi }
            }
            other => return Err(Error::UnknownKey(other.to_string())),
        })
    }

    pub fn apply(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let check = |lo: &[f64]| {
            if lo.len() != obs.len() {
                Err(Error::shape(format!(
                    "transform for {} dims applied to {}",
                    lo.len(),
                    obs.len()
                )))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            ObsTransform::None => obs.to_vec(),
            ObsTransform::Scale { lo, hi } => {
                check(lo)?;
                obs.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(o, (l, h))| 2.0 * (o - l) / (h - l) - 1.0)
                    .collect()
            }
            ObsTransform::Clip { lo, hi } => {
                check(lo)?;
                obs.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(o, (l, h))| o.clamp(*l, *h))
                    .collect()
            }
        })
    }
}

/// Functional form of [`ObsTransform::apply`].
pub fn transform_obs(obs: &[f64], spec: &ObsTransform) -> Result<Vec<f64>> {
    spec.apply(obs)
}

/// Affine map of a normalised action in `[-1, 1]^d` onto the box, clipped.
pub fn rescale_action(a_norm: &[f64], spaces: &Spaces) -> Result<Vec<f64>> {
    match &spaces.action {
        ActionSpace::Discrete(_) => Err(Error::Invalid("cannot rescale a discrete action".into())),
        ActionSpace::Continuous { lo, hi } => {
            if a_norm.len() != lo.len() {
                return Err(Error::shape(format!(
                    "{}-dim action for a {}-dim space",
                    a_norm.len(),
                    lo.len()
                )));
            }
            Ok(a_norm
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(a, (l, h))| l + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (h - l))
                .collect())
        }
    }
}

/// Inverse of [`rescale_action`] on in-range actions.
pub fn normalize_action(a: &[f64], spaces: &Spaces) -> Result<Vec<f64>> {
    match &spaces.action {
        ActionSpace::Discrete(_) => {
            Err(Error::Invalid("cannot normalise a discrete action".into()))
        }
        ActionSpace::Continuous { lo, hi } => Ok(a
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(a, (l, h))| 2.0 * (a - l) / (h - l) - 1.0)
            .collect()),
    }
}

/// A task with its time limit, observation transform and private random stream.
pub struct Env {
    dynamics: Box<dyn Dynamics>,
    transform: ObsTransform,
    rng: ChaCha8Rng,
    steps: usize,
    max_steps: usize,
}

impl std::fmt::Debug for Env {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Env")
            .field("spaces", &self.dynamics.spaces())
            .field("steps", &self.steps)
            .field("max_steps", &self.max_steps)
            .finish()
    }
}

impl Env {
    pub fn new(dynamics: Box<dyn Dynamics>, transform: ObsTransform, seed: u64) -> Self {
        let max_steps = dynamics.max_episode_steps();
        Self {
            dynamics,
            transform,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            max_steps,
        }
    }

    pub fn spaces(&self) -> Spaces {
        self.dynamics.spaces()
    }

    pub fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    pub fn local_obs_dim(&self) -> Option<usize> {
        self.dynamics.local_obs_dim()
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        self.steps = 0;
        let obs = self.dynamics.reset(&mut self.rng);
        self.transform.apply(&obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let spaces = self.dynamics.spaces();
        if !spaces.action.contains(action) {
            return Err(Error::Invalid(format!(
                "action {action:?} outside {:?}",
                spaces.action
            )));
        }
        let (obs, reward, terminal) = self.dynamics.step(action, &mut self.rng);
        self.steps += 1;
        // a time-limit cut is never a termination
        let truncated = !terminal && self.steps >= self.max_steps;
        Ok(StepResult {
            obs: self.transform.apply(&obs)?,
            reward,
            terminal,
            truncated,
        })
    }
}

/// Constructs raw dynamics from the `environment.extra` parameters.
pub type EnvFactory = Factory<Box<dyn Dynamics>, ()>;

pub fn env_factory() -> EnvFactory {
    let mut f = EnvFactory::new("environment");
    f.register("cartpole", |p, _| {
        Ok(Box::new(CartPole::from_params(p)?) as Box<dyn Dynamics>)
    });
    f.register("pendulum", |p, _| {
        Ok(Box::new(Pendulum::from_params(p)?) as Box<dyn Dynamics>)
    });
    f.register("lorenz", |p, _| {
        Ok(Box::new(Lorenz::from_params(p)?) as Box<dyn Dynamics>)
    });
    f.register("chain", |p, _| {
        Ok(Box::new(Chain::from_params(p)?) as Box<dyn Dynamics>)
    });
    f
}

/// Builds an environment by name; `params` is the `environment` section.
pub fn make_env(name: &str, params: &ParamTree, seed: u64) -> Result<Env> {
    let extra = params.subtree("extra").unwrap_or_default();
    let mut dynamics = env_factory().create(name, &extra, &())?;
    if let Ok(lift) = extra.subtree("lift") {
        dynamics = Box::new(Lifted::from_params(dynamics, &lift)?);
    }
    let transform = match params.subtree("obs_transform") {
        Ok(t) => ObsTransform::from_params(&t)?,
        Err(_) => ObsTransform::None,
    };
    if let ObsTransform::Scale { lo, .. } | ObsTransform::Clip { lo, .. } = &transform {
        if lo.len() != dynamics.spaces().obs_dim {
            return Err(Error::shape(format!(
                "obs_transform has {} bounds for {} observations",
                lo.len(),
                dynamics.spaces().obs_dim
            )));
        }
    }
    Ok(Env::new(dynamics, transform, seed))
}

#[cfg(test)]
mod tests;
