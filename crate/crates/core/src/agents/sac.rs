use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::td3::critic_step;
use super::{
    build_net, check_obs, continuous_dim, gaussian, replay_fields, ActMode, ActOutput, Agent,
    AgentContext, Common, UpdateReport, ACT, NEXT_OBS, OBS, REW, TERM,
};
use crate::buffer::{Batch, FieldSpec};
use crate::config::ParamTree;
use crate::dist::{
    clamp_log_std, log1m_tanh_sq, squash, DiagGaussian, TanhSample, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::envs::Spaces;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, AdamState, Grads, Matrix, Mlp};

/// Soft actor-critic with a tanh-squashed Gaussian actor and, optionally,
/// automatic temperature tuning through `log(alpha)`.
#[derive(Debug, Clone)]
pub struct Sac {
    spaces: Spaces,
    common: Common,
    act_dim: usize,
    /// Outputs `[mean, log_std]` per action dimension.
    pub actor: Mlp<f64>,
    pub critics: [Mlp<f64>; 2],
    pub critic_targets: [Mlp<f64>; 2],
    actor_opt: AdamState<f64>,
    critic_opts: [AdamState<f64>; 2],
    pub log_alpha: f64,
    /// Temperature in use; zero disables the entropy terms.
    pub alpha: f64,
    auto_alpha: bool,
    alpha_opt: AdamState<f64>,
    lr_alpha: f64,
    pub target_entropy: f64,
    tau: f64,
    rng: ChaCha8Rng,
    updates: usize,
}

impl Sac {
    pub fn new(p: &ParamTree, ctx: &AgentContext) -> Result<Self> {
        let act_dim = continuous_dim(&ctx.spaces, "sac")?;
        let common = Common::from_params(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let obs_dim = ctx.spaces.obs_dim;
        let actor = build_net(
            p,
            "policy",
            obs_dim,
            2 * act_dim,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let c1 = build_net(
            p,
            "value",
            obs_dim + act_dim,
            1,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let c2 = build_net(
            p,
            "value",
            obs_dim + act_dim,
            1,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let alpha = p.opt_f64("init_alpha")?.unwrap_or(1.0);
        if alpha < 0.0 {
            return Err(Error::Invalid("init_alpha must be non-negative".into()));
        }
        let auto_alpha = match p.lookup("auto_alpha") {
            Some(_) => p.bool("auto_alpha")?,
            None => true,
        };
        if auto_alpha && alpha == 0.0 {
            return Err(Error::Invalid(
                "automatic temperature needs init_alpha > 0".into(),
            ));
        }
        Ok(Self {
            spaces: ctx.spaces.clone(),
            act_dim,
            actor_opt: AdamState::for_mlp(&actor),
            critic_opts: [AdamState::for_mlp(&c1), AdamState::for_mlp(&c2)],
            critic_targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            log_alpha: alpha.ln(),
            alpha,
            auto_alpha,
            alpha_opt: AdamState::new(&[1]),
            lr_alpha: p.opt_f64("lr.alpha")?.unwrap_or(3e-4),
            target_entropy: p.opt_f64("target_entropy")?.unwrap_or(-(act_dim as f64)),
            tau: p.opt_f64("tau")?.unwrap_or(0.005),
            common,
            rng,
            updates: 0,
        })
    }

    fn heads(&self, out: &Matrix<f64>, i: usize) -> DiagGaussian {
        let row = out.row(i);
        DiagGaussian::new(row[..self.act_dim].to_vec(), row[self.act_dim..].to_vec())
    }

    /// Squashed actions `tanh(mean + std * eps)` with their log-probabilities.
    pub fn squashed(&self, out: &Matrix<f64>, eps: &Matrix<f64>) -> Vec<TanhSample> {
        (0..out.rows())
            .map(|i| {
                let g = self.heads(out, i);
                let e = eps.row(i).to_vec();
                let pre_tanh: Vec<f64> = g
                    .mean()
                    .iter()
                    .zip(g.log_std())
                    .zip(&e)
                    .map(|((m, l), e)| m + l.exp() * e)
                    .collect();
                let logp =
                    g.log_prob(&pre_tanh) - pre_tanh.iter().map(|&u| log1m_tanh_sq(u)).sum::<f64>();
                TanhSample {
                    action: pre_tanh.iter().map(|&u| squash(u)).collect(),
                    logp,
                    pre_tanh,
                    eps: e,
                }
            })
            .collect()
    }

    pub(crate) fn noise(&mut self, rows: usize) -> Matrix<f64> {
        let data = (0..rows * self.act_dim)
            .map(|_| gaussian(&mut self.rng))
            .collect();
        Matrix::from_vec(rows, self.act_dim, data).expect("noise shape")
    }

    /// Actor loss `mean(alpha * logp - min Q)` for fixed noise `eps`, its mean
    /// log-probability and the actor gradients.
    pub fn actor_objective(
        &self,
        obs: &Matrix<f64>,
        eps: &Matrix<f64>,
    ) -> Result<(f64, f64, Grads<f64>)> {
        let (out, cache) = self.actor.forward(obs)?;
        let samples = self.squashed(&out, eps);
        let n = obs.rows();
        let b = n as f64;
        let acts =
            Matrix::from_rows(&samples.iter().map(|s| s.action.clone()).collect::<Vec<_>>())?;
        let input = obs.hcat(&acts)?;
        let (q1, c1) = self.critics[0].forward(&input)?;
        let (q2, c2) = self.critics[1].forward(&input)?;
        // route d(-min Q)/da through whichever critic is smaller per row
        let mut d1 = Matrix::zeros(n, 1);
        let mut d2 = Matrix::zeros(n, 1);
        let mut loss = 0.0;
        for i in 0..n {
            let (a, b2) = (q1.row(i)[0], q2.row(i)[0]);
            if a <= b2 {
                d1.row_mut(i)[0] = -1.0 / b;
            } else {
                d2.row_mut(i)[0] = -1.0 / b;
            }
            loss += (self.alpha * samples[i].logp - a.min(b2)) / b;
        }
        let (_, dx1) = self.critics[0].backward_with_input(&c1, &d1)?;
        let (_, dx2) = self.critics[1].backward_with_input(&c2, &d2)?;
        let od = self.spaces.obs_dim;
        let mut d_out = Matrix::zeros(n, 2 * self.act_dim);
        for i in 0..n {
            let s = &samples[i];
            let raw_log_std = &out.row(i)[self.act_dim..];
            for j in 0..self.act_dim {
                let t = s.pre_tanh[j].tanh();
                let dq_da = dx1.row(i)[od + j] + dx2.row(i)[od + j];
                // d loss / d u for u = mean + std * eps with eps held fixed
                let d_u = self.alpha * 2.0 * t / b + dq_da * (1.0 - t * t);
                let std = clamp_log_std(raw_log_std[j]).exp();
                let row = d_out.row_mut(i);
                row[j] = d_u;
                let inside = raw_log_std[j] > LOG_STD_MIN && raw_log_std[j] < LOG_STD_MAX;
                row[self.act_dim + j] = if inside {
                    -self.alpha / b + d_u * std * s.eps[j]
                } else {
                    0.0
                };
            }
        }
        let grads = self.actor.backward(&cache, &d_out)?;
        let mean_logp = samples.iter().map(|s| s.logp).sum::<f64>() / b;
        Ok((loss, mean_logp, grads))
    }

    fn actor_step(&mut self, obs: &Matrix<f64>) -> Result<(f64, f64)> {
        let eps = self.noise(obs.rows());
        let (loss, mean_logp, mut grads) = self.actor_objective(obs, &eps)?;
        clip_global_norm(&mut [&mut grads], self.common.grad_clip);
        self.actor_opt
            .step_mlp(&mut self.actor, &grads, self.common.lr_policy)?;
        Ok((loss, mean_logp))
    }

    /// Gradient of `-log_alpha * (logp + target_entropy)` averaged over the batch.
    pub fn alpha_grad(&self, mean_logp: f64) -> f64 {
        -(mean_logp + self.target_entropy)
    }
}

impl Agent for Sac {
    fn kind(&self) -> &'static str {
        "sac"
    }

    fn spaces(&self) -> &Spaces {
        &self.spaces
    }

    fn is_on_policy(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Matrix<f64>, mode: ActMode) -> Result<ActOutput> {
        check_obs(&self.spaces, obs)?;
        let out = self.actor.predict(obs)?;
        let mut actions = Matrix::zeros(obs.rows(), self.act_dim);
        for i in 0..obs.rows() {
            let a = match mode {
                ActMode::Explore => {
                    self.heads(&out, i)
                        .tanh_sample_logprob(&mut self.rng)
                        .action
                }
                ActMode::Deterministic => out.row(i)[..self.act_dim]
                    .iter()
                    .map(|&m| squash(m))
                    .collect(),
            };
            actions.row_mut(i).copy_from_slice(&a);
        }
        Ok(ActOutput {
            actions,
            logp: Vec::new(),
            values: Vec::new(),
        })
    }

    fn update(&mut self, batch: &Batch<f64>) -> Result<UpdateReport> {
        let obs = batch.get(OBS)?;
        let next_obs = batch.get(NEXT_OBS)?;
        let rew = batch.scalar(REW)?;
        let term = batch.scalar(TERM)?;
        let next_out = self.actor.predict(next_obs)?;
        let eps = self.noise(next_obs.rows());
        let next = self.squashed(&next_out, &eps);
        let a_next = Matrix::from_rows(&next.iter().map(|s| s.action.clone()).collect::<Vec<_>>())?;
        let next_in = next_obs.hcat(&a_next)?;
        let q1 = self.critic_targets[0].predict(&next_in)?;
        let q2 = self.critic_targets[1].predict(&next_in)?;
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                let not_done = if term[i] > 0.5 { 0.0 } else { 1.0 };
                let soft = q1.as_slice()[i].min(q2.as_slice()[i]) - self.alpha * next[i].logp;
                rew[i] + self.common.gamma * not_done * soft
            })
            .collect();
        let input = obs.hcat(batch.get(ACT)?)?;
        let mut q_loss = 0.0;
        for k in 0..2 {
            q_loss += critic_step(
                &mut self.critics[k],
                &mut self.critic_opts[k],
                &self.common,
                &input,
                &y,
            )?;
        }
        let (policy_loss, mean_logp) = self.actor_step(obs)?;
        if self.auto_alpha {
            let g = self.alpha_grad(mean_logp);
            let mut la = [self.log_alpha];
            self.alpha_opt
                .step(&mut [&mut la], &[&[g]], self.lr_alpha)?;
            self.log_alpha = la[0];
            self.alpha = self.log_alpha.exp();
        }
        for k in 0..2 {
            polyak_update(&mut self.critic_targets[k], &self.critics[k], self.tau)?;
        }
        self.updates += 1;
        let mut r = UpdateReport::default();
        r.push("q_loss", q_loss);
        r.push("policy_loss", policy_loss);
        r.push("entropy", -mean_logp);
        r.push("alpha", self.alpha);
        if !self.actor.is_finite() || !self.critics.iter().all(Mlp::is_finite) {
            return Err(Error::NonFinite("sac parameters after update".into()));
        }
        r.checked()
    }

    fn batch_fields(&self) -> Vec<FieldSpec> {
        replay_fields(&self.spaces)
    }

    fn networks(&self) -> Vec<(&'static str, &Mlp<f64>)> {
        vec![
            ("actor", &self.actor),
            ("critic1", &self.critics[0]),
            ("critic2", &self.critics[1]),
        ]
    }

    fn n_updates(&self) -> usize {
        self.updates
    }
}
