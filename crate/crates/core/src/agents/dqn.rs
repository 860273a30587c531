use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    build_net, check_obs, column, replay_fields, ActMode, ActOutput, Agent, AgentContext, Common,
    UpdateReport, ACT, NEXT_OBS, OBS, REW, TERM,
};
use crate::buffer::{Batch, FieldSpec};
use crate::config::ParamTree;
use crate::dist::{argmax, epsilon_greedy};
use crate::envs::{ActionSpace, Spaces};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, AdamState, Matrix, Mlp};
use crate::returns::td_target;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSync {
    /// Copy the online network every `n` updates.
    Hard(usize),
    Polyak(f64),
}

/// Deep Q-network with a linearly decayed epsilon-greedy policy.
#[derive(Debug, Clone)]
pub struct Dqn {
    spaces: Spaces,
    common: Common,
    pub q: Mlp<f64>,
    pub target: Mlp<f64>,
    opt: AdamState<f64>,
    pub sync: TargetSync,
    eps_start: f64,
    eps_end: f64,
    eps_fraction: f64,
    eps: f64,
    rng: ChaCha8Rng,
    updates: usize,
}

impl Dqn {
    pub fn new(p: &ParamTree, ctx: &AgentContext) -> Result<Self> {
        let k = match ctx.spaces.action {
            ActionSpace::Discrete(k) => k,
            ActionSpace::Continuous { .. } => {
                return Err(Error::Invalid("dqn needs a discrete action space".into()))
            }
        };
        let common = Common::from_params(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let q = build_net(
            p,
            "value",
            ctx.spaces.obs_dim,
            k,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let sync = match p
            .lookup("target_sync")
            .and_then(|v| v.as_str())
            .unwrap_or("hard")
        {
            "hard" => TargetSync::Hard(p.opt_usize("sync_every")?.unwrap_or(500).max(1)),
            "polyak" => TargetSync::Polyak(p.opt_f64("tau")?.unwrap_or(0.005)),
            other => return Err(Error::UnknownKey(other.to_string())),
        };
        let eps_start = p.opt_f64("eps_start")?.unwrap_or(1.0);
        Ok(Self {
            spaces: ctx.spaces.clone(),
            target: q.clone(),
            opt: AdamState::for_mlp(&q),
            q,
            common,
            sync,
            eps_start,
            eps_end: p.opt_f64("eps_end")?.unwrap_or(0.05),
            eps_fraction: p.opt_f64("eps_fraction")?.unwrap_or(0.5),
            eps: eps_start,
            rng,
            updates: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        self.eps = eps;
    }
}

impl Agent for Dqn {
    fn kind(&self) -> &'static str {
        "dqn"
    }

    fn spaces(&self) -> &Spaces {
        &self.spaces
    }

    fn is_on_policy(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Matrix<f64>, mode: ActMode) -> Result<ActOutput> {
        check_obs(&self.spaces, obs)?;
        let q = self.q.predict(obs)?;
        let mut actions = Matrix::zeros(obs.rows(), 1);
        for i in 0..obs.rows() {
            let a = match mode {
                ActMode::Explore => epsilon_greedy(q.row(i), self.eps, &mut self.rng),
                ActMode::Deterministic => argmax(q.row(i)),
            };
            actions.row_mut(i)[0] = a as f64;
        }
        Ok(ActOutput {
            actions,
            logp: Vec::new(),
            values: Vec::new(),
        })
    }

    fn update(&mut self, batch: &Batch<f64>) -> Result<UpdateReport> {
        let obs = batch.get(OBS)?;
        let acts = column(batch.get(ACT)?, 0);
        let rew = batch.scalar(REW)?;
        let term = batch.scalar(TERM)?;
        let b = batch.len() as f64;
        let q_next = self.target.predict(batch.get(NEXT_OBS)?)?;
        let (q, cache) = self.q.forward(obs)?;
        let mut d_out = Matrix::zeros(q.rows(), q.cols());
        let mut loss = 0.0;
        let mut q_mean = 0.0;
        for i in 0..batch.len() {
            let a = acts[i] as usize;
            let next = q_next
                .row(i)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let y = td_target(rew[i], term[i] > 0.5, self.common.gamma, next);
            let (l, g) = self.common.loss.value_grad(q.row(i)[a], y);
            loss += l / b;
            q_mean += q.row(i)[a] / b;
            d_out.row_mut(i)[a] = g / b;
        }
        let mut grads = self.q.backward(&cache, &d_out)?;
        clip_global_norm(&mut [&mut grads], self.common.grad_clip);
        self.opt
            .step_mlp(&mut self.q, &grads, self.common.lr_value)?;
        self.updates += 1;
        match self.sync {
            TargetSync::Hard(every) => {
                if self.updates % every == 0 {
                    self.target = self.q.clone();
                }
            }
            TargetSync::Polyak(tau) => polyak_update(&mut self.target, &self.q, tau)?,
        }
        let mut r = UpdateReport::default();
        r.push("q_loss", loss);
        r.push("q_mean", q_mean);
        r.push("epsilon", self.eps);
        if !self.q.is_finite() {
            return Err(Error::NonFinite("dqn parameters after update".into()));
        }
        r.checked()
    }

    fn batch_fields(&self) -> Vec<FieldSpec> {
        replay_fields(&self.spaces)
    }

    fn networks(&self) -> Vec<(&'static str, &Mlp<f64>)> {
        vec![("q", &self.q)]
    }

    fn set_progress(&mut self, fraction: f64) {
        let t = if self.eps_fraction > 0.0 {
            (fraction / self.eps_fraction).clamp(0.0, 1.0)
        } else {
            1.0
        };
        self.eps = self.eps_start + t * (self.eps_end - self.eps_start);
    }

    fn n_updates(&self) -> usize {
        self.updates
    }
}
