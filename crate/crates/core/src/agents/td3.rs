use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    build_net, check_obs, continuous_dim, gaussian, replay_fields, ActMode, ActOutput, Agent,
    AgentContext, Common, UpdateReport, ACT, NEXT_OBS, OBS, REW, TERM,
};
use crate::buffer::{Batch, FieldSpec};
use crate::config::ParamTree;
use crate::envs::Spaces;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, Activation, AdamState, Matrix, Mlp};

/// Twin critics, target policy smoothing and delayed actor updates.
#[derive(Debug, Clone)]
pub struct Td3 {
    spaces: Spaces,
    common: Common,
    act_dim: usize,
    pub actor: Mlp<f64>,
    pub actor_target: Mlp<f64>,
    pub critics: [Mlp<f64>; 2],
    pub critic_targets: [Mlp<f64>; 2],
    actor_opt: AdamState<f64>,
    critic_opts: [AdamState<f64>; 2],
    pub expl_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    tau: f64,
    rng: ChaCha8Rng,
    updates: usize,
}

/// One-step squared-error regression of a critic onto fixed targets.
pub(crate) fn critic_step(
    critic: &mut Mlp<f64>,
    opt: &mut AdamState<f64>,
    common: &Common,
    input: &Matrix<f64>,
    y: &[f64],
) -> Result<f64> {
    let (q, cache) = critic.forward(input)?;
    let b = y.len() as f64;
    let mut d = Matrix::zeros(q.rows(), 1);
    let mut loss = 0.0;
    for i in 0..y.len() {
        let (l, g) = common.loss.value_grad(q.row(i)[0], y[i]);
        loss += l / b;
        d.row_mut(i)[0] = g / b;
    }
    let mut grads = critic.backward(&cache, &d)?;
    clip_global_norm(&mut [&mut grads], common.grad_clip);
    opt.step_mlp(critic, &grads, common.lr_value)?;
    Ok(loss)
}

impl Td3 {
    pub fn new(p: &ParamTree, ctx: &AgentContext) -> Result<Self> {
        let act_dim = continuous_dim(&ctx.spaces, "td3")?;
        let common = Common::from_params(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let obs_dim = ctx.spaces.obs_dim;
        let actor = build_net(
            p,
            "policy",
            obs_dim,
            act_dim,
            Activation::Tanh,
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
        let policy_delay = p.opt_usize("policy_delay")?.unwrap_or(2);
        if policy_delay == 0 {
            return Err(Error::Invalid("policy_delay must be at least 1".into()));
        }
        Ok(Self {
            spaces: ctx.spaces.clone(),
            act_dim,
            actor_target: actor.clone(),
            actor_opt: AdamState::for_mlp(&actor),
            critic_opts: [AdamState::for_mlp(&c1), AdamState::for_mlp(&c2)],
            critic_targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            common,
            expl_noise: p.opt_f64("expl_noise")?.unwrap_or(0.1),
            target_noise: p.opt_f64("target_noise")?.unwrap_or(0.2),
            noise_clip: p.opt_f64("noise_clip")?.unwrap_or(0.5),
            policy_delay,
            tau: p.opt_f64("tau")?.unwrap_or(0.005),
            rng,
            updates: 0,
        })
    }

    /// Smoothed target actions `clip(pi'(s') + clip(noise, +-c), -1, 1)`.
    pub fn target_actions(&mut self, next_obs: &Matrix<f64>) -> Result<Matrix<f64>> {
        let mut a = self.actor_target.predict(next_obs)?;
        for v in a.as_mut_slice() {
            let noise = if self.target_noise > 0.0 {
                (self.target_noise * gaussian(&mut self.rng))
                    .clamp(-self.noise_clip, self.noise_clip)
            } else {
                0.0
            };
            *v = (*v + noise).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    fn actor_step(&mut self, obs: &Matrix<f64>) -> Result<f64> {
        let (a, cache) = self.actor.forward(obs)?;
        let input = obs.hcat(&a)?;
        let (q, qcache) = self.critics[0].forward(&input)?;
        let b = obs.rows() as f64;
        let d_q = Matrix::from_vec(q.rows(), 1, vec![-1.0 / b; q.rows()])?;
        let (_, d_in) = self.critics[0].backward_with_input(&qcache, &d_q)?;
        let d_a = d_in.columns(self.spaces.obs_dim, self.spaces.obs_dim + self.act_dim);
        let mut grads = self.actor.backward(&cache, &d_a)?;
        clip_global_norm(&mut [&mut grads], self.common.grad_clip);
        self.actor_opt
            .step_mlp(&mut self.actor, &grads, self.common.lr_policy)?;
        Ok(-q.as_slice().iter().sum::<f64>() / b)
    }
}

impl Agent for Td3 {
    fn kind(&self) -> &'static str {
        "td3"
    }

    fn spaces(&self) -> &Spaces {
        &self.spaces
    }

    fn is_on_policy(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Matrix<f64>, mode: ActMode) -> Result<ActOutput> {
        check_obs(&self.spaces, obs)?;
        let mut actions = self.actor.predict(obs)?;
        if mode == ActMode::Explore {
            for v in actions.as_mut_slice() {
                *v = (*v + self.expl_noise * gaussian(&mut self.rng)).clamp(-1.0, 1.0);
            }
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
        let a_next = self.target_actions(next_obs)?;
        let next_in = next_obs.hcat(&a_next)?;
        let q1 = self.critic_targets[0].predict(&next_in)?;
        let q2 = self.critic_targets[1].predict(&next_in)?;
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                let not_done = if term[i] > 0.5 { 0.0 } else { 1.0 };
                rew[i] + self.common.gamma * not_done * q1.as_slice()[i].min(q2.as_slice()[i])
            })
            .collect();
        let input = obs.hcat(batch.get(ACT)?)?;
        let mut r = UpdateReport::default();
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
        r.push("q_loss", q_loss);
        self.updates += 1;
        if self.updates % self.policy_delay == 0 {
            let pl = self.actor_step(obs)?;
            r.push("policy_loss", pl);
            polyak_update(&mut self.actor_target, &self.actor, self.tau)?;
            for k in 0..2 {
                polyak_update(&mut self.critic_targets[k], &self.critics[k], self.tau)?;
            }
        }
        if !self.actor.is_finite() || !self.critics.iter().all(Mlp::is_finite) {
            return Err(Error::NonFinite("td3 parameters after update".into()));
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
