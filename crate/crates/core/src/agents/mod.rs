//! The four agents: ppo (on-policy), dqn, td3 and sac (off-policy).
//!
//! Agents see normalised continuous actions in `[-1, 1]^d`; the trainer maps
//! them onto the environment box. Discrete actions travel as an index stored
//! in a one-wide column.

mod dqn;
mod ppo;
mod sac;
mod td3;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use dqn::Dqn;
pub use ppo::Ppo;
pub use sac::Sac;
pub use td3::Td3;

use crate::buffer::{Batch, FieldSpec};
use crate::config::{Factory, ParamTree};
use crate::envs::{ActionSpace, Spaces};
use crate::error::{Error, Result};
use crate::nn::{Activation, InitScheme, Loss, Matrix, Mlp};

pub const OBS: &str = "obs";
pub const ACT: &str = "act";
pub const REW: &str = "rew";
pub const NEXT_OBS: &str = "next_obs";
pub const TERM: &str = "term";
pub const LOGP: &str = "logp";
pub const ADV: &str = "adv";
pub const RET: &str = "ret";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Explore,
    Deterministic,
}

/// Actions for a batch of observations plus what on-policy training needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub actions: Matrix<f64>,
    /// Log-probability of each action under the acting policy (ppo only).
    pub logp: Vec<f64>,
    /// State values (ppo only).
    pub values: Vec<f64>,
}

/// Named loss scalars of one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub entries: Vec<(&'static str, f64)>,
}

impl UpdateReport {
    pub fn push(&mut self, name: &'static str, value: f64) {
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.is_finite())
    }

    fn checked(self) -> Result<Self> {
        match self.entries.iter().find(|(_, v)| !v.is_finite()) {
            Some((n, v)) => Err(Error::NonFinite(format!("{n} = {v} after update"))),
            None => Ok(self),
        }
    }
}

pub trait Agent: Send {
    fn kind(&self) -> &'static str;
    /// Spaces as seen by the agent; `obs_dim` is after any representation learning.
    fn spaces(&self) -> &Spaces;
    fn is_on_policy(&self) -> bool;
    fn act(&mut self, obs: &Matrix<f64>, mode: ActMode) -> Result<ActOutput>;
    /// State values, for bootstrapping truncated rollouts.
    fn values(&self, obs: &Matrix<f64>) -> Result<Vec<f64>> {
        let _ = obs;
        Err(Error::Invalid(format!(
            "{} has no state-value head",
            self.kind()
        )))
    }
    fn update(&mut self, batch: &Batch<f64>) -> Result<UpdateReport>;
    /// Columns `update` expects.
    fn batch_fields(&self) -> Vec<FieldSpec>;
    /// Named online networks, for checkpoints.
    fn networks(&self) -> Vec<(&'static str, &Mlp<f64>)>;
    /// Fraction of the transition budget consumed so far.
    fn set_progress(&mut self, _fraction: f64) {}
    fn n_updates(&self) -> usize;
}

/// What an agent constructor needs besides its own parameters.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub spaces: Spaces,
    pub seed: u64,
    pub n_epochs: usize,
    pub batch_size: usize,
}

pub type AgentFactory = Factory<Box<dyn Agent>, AgentContext>;

pub fn agent_factory() -> AgentFactory {
    let mut f = AgentFactory::new("agent");
    f.register(
        "ppo",
        |p, c| Ok(Box::new(Ppo::new(p, c)?) as Box<dyn Agent>),
    );
    f.register(
        "dqn",
        |p, c| Ok(Box::new(Dqn::new(p, c)?) as Box<dyn Agent>),
    );
    f.register(
        "td3",
        |p, c| Ok(Box::new(Td3::new(p, c)?) as Box<dyn Agent>),
    );
    f.register(
        "sac",
        |p, c| Ok(Box::new(Sac::new(p, c)?) as Box<dyn Agent>),
    );
    f
}

/// Fields of the replay rows shared by the off-policy agents.
pub fn replay_fields(spaces: &Spaces) -> Vec<FieldSpec> {
    vec![
        FieldSpec::new(OBS, spaces.obs_dim),
        FieldSpec::new(ACT, spaces.action.dim()),
        FieldSpec::new(REW, 1),
        FieldSpec::new(NEXT_OBS, spaces.obs_dim),
        FieldSpec::new(TERM, 1),
    ]
}

pub fn activation_from_name(name: &str) -> Result<Activation> {
    match name {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        "linear" => Ok(Activation::Linear),
        "softmax" => Ok(Activation::Softmax),
        other => Err(Error::UnknownKey(other.to_string())),
    }
}

pub fn init_from_name(name: &str) -> Result<InitScheme> {
    match name {
        "xavier_uniform" => Ok(InitScheme::XavierUniform),
        "orthogonal" => Ok(InitScheme::Orthogonal),
        other => Err(Error::UnknownKey(other.to_string())),
    }
}

/// Hyperparameters every agent reads.
#[derive(Debug, Clone)]
pub(crate) struct Common {
    pub gamma: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub grad_clip: f64,
    pub loss: Loss,
    pub init: InitScheme,
}

impl Common {
    pub fn from_params(p: &ParamTree) -> Result<Self> {
        Ok(Self {
            gamma: p.opt_f64("gamma")?.unwrap_or(0.99),
            lr_policy: p.opt_f64("lr.policy")?.unwrap_or(3e-4),
            lr_value: p.opt_f64("lr.value")?.unwrap_or(3e-4),
            grad_clip: p.opt_f64("grad_clip")?.unwrap_or(10.0),
            loss: match p.lookup("loss") {
                Some(_) => Loss::from_name(&p.str("loss")?)?,
                None => Loss::Mse,
            },
            init: match p.lookup("init") {
                Some(_) => init_from_name(&p.str("init")?)?,
                None => InitScheme::XavierUniform,
            },
        })
    }
}

/// Builds `in -> hidden... -> out` from the `networks.<role>` block.
pub(crate) fn build_net<R: Rng + ?Sized>(
    p: &ParamTree,
    role: &str,
    in_dim: usize,
    out_dim: usize,
    out_act: Activation,
    init: InitScheme,
    rng: &mut R,
) -> Result<Mlp<f64>> {
    let hidden = match p.lookup(&format!("networks.{role}.layers")) {
        Some(_) => p.usize_list(&format!("networks.{role}.layers"))?,
        None => vec![64, 64],
    };
    let act = match p.lookup(&format!("networks.{role}.activation")) {
        Some(_) => activation_from_name(&p.str(&format!("networks.{role}.activation"))?)?,
        None => Activation::Tanh,
    };
    if act == Activation::Softmax {
        return Err(Error::Invalid(
            "softmax cannot be a hidden activation".into(),
        ));
    }
    let mut sizes = vec![in_dim];
    sizes.extend(hidden.iter().copied());
    sizes.push(out_dim);
    let mut acts = vec![act; hidden.len()];
    acts.push(out_act);
    Mlp::new(&sizes, &acts, init, rng)
}

pub(crate) fn check_obs(spaces: &Spaces, obs: &Matrix<f64>) -> Result<()> {
    if obs.cols() != spaces.obs_dim {
        return Err(Error::shape(format!(
            "{}-wide observations for obs_dim {}",
            obs.cols(),
            spaces.obs_dim
        )));
    }
    Ok(())
}

pub(crate) fn continuous_dim(spaces: &Spaces, agent: &str) -> Result<usize> {
    match &spaces.action {
        ActionSpace::Continuous { lo, .. } => Ok(lo.len()),
        ActionSpace::Discrete(_) => Err(Error::Invalid(format!(
            "{agent} needs a continuous action space"
        ))),
    }
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Column `j` of a batch field as a vector.
pub(crate) fn column(m: &Matrix<f64>, j: usize) -> Vec<f64> {
    m.row_iter().map(|r| r[j]).collect()
}
