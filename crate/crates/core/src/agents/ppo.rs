use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    build_net, check_obs, ActMode, ActOutput, Agent, AgentContext, Common, UpdateReport, ACT, ADV,
    LOGP, OBS, RET,
};
use crate::buffer::{Batch, FieldSpec};
use crate::config::ParamTree;
use crate::dist::{clamp_log_std, Categorical, DiagGaussian, LOG_STD_MAX, LOG_STD_MIN};
use crate::envs::{ActionSpace, Spaces};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Activation, AdamState, Grads, Matrix, Mlp};
use crate::returns::normalize;

/// Clipped-surrogate actor-critic with a Gaussian (state-independent
/// log-std) or categorical head.
#[derive(Debug, Clone)]
pub struct Ppo {
    spaces: Spaces,
    common: Common,
    pub policy: Mlp<f64>,
    pub value: Mlp<f64>,
    /// Log standard deviations of the Gaussian head; empty for discrete actions.
    pub log_std: Vec<f64>,
    policy_opt: AdamState<f64>,
    log_std_opt: AdamState<f64>,
    value_opt: AdamState<f64>,
    clip: f64,
    entropy_coef: f64,
    normalize_advantages: bool,
    pub gae_lambda: f64,
    n_epochs: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    updates: usize,
}

impl Ppo {
    pub fn new(p: &ParamTree, ctx: &AgentContext) -> Result<Self> {
        let common = Common::from_params(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let spaces = ctx.spaces.clone();
        let out = match &spaces.action {
            ActionSpace::Discrete(k) => *k,
            ActionSpace::Continuous { lo, .. } => lo.len(),
        };
        let policy = build_net(
            p,
            "policy",
            spaces.obs_dim,
            out,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let value = build_net(
            p,
            "value",
            spaces.obs_dim,
            1,
            Activation::Linear,
            common.init,
            &mut rng,
        )?;
        let log_std = match &spaces.action {
            ActionSpace::Discrete(_) => Vec::new(),
            ActionSpace::Continuous { .. } => {
                vec![clamp_log_std(p.opt_f64("log_std_init")?.unwrap_or(0.0)); out]
            }
        };
        let n_epochs = ctx.n_epochs;
        let batch_size = ctx.batch_size;
        if n_epochs == 0 || batch_size == 0 {
            return Err(Error::Invalid(
                "ppo needs positive n_epochs and batch_size".into(),
            ));
        }
        Ok(Self {
            policy_opt: AdamState::for_mlp(&policy),
            value_opt: AdamState::for_mlp(&value),
            log_std_opt: AdamState::new(&[log_std.len()]),
            spaces,
            common,
            policy,
            value,
            log_std,
            clip: p.opt_f64("clip")?.unwrap_or(0.2),
            entropy_coef: p.opt_f64("entropy_coef")?.unwrap_or(0.01),
            normalize_advantages: match p.lookup("normalize_advantages") {
                Some(_) => p.bool("normalize_advantages")?,
                None => true,
            },
            gae_lambda: p.opt_f64("gae_lambda")?.unwrap_or(0.95),
            n_epochs,
            batch_size,
            rng,
            updates: 0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.common.gamma
    }

    /// Log-probability and entropy of `action` under the current head output row.
    fn logp_entropy(&self, head: &[f64], action: &[f64]) -> (f64, f64) {
        if self.log_std.is_empty() {
            let c = Categorical::new(head.to_vec());
            (c.log_prob(action[0] as usize), c.entropy())
        } else {
            let g = DiagGaussian::new(head.to_vec(), self.log_std.clone());
            (g.log_prob(action), g.entropy())
        }
    }

    pub fn log_prob(&self, obs: &Matrix<f64>, actions: &Matrix<f64>) -> Result<Vec<f64>> {
        check_obs(&self.spaces, obs)?;
        let head = self.policy.predict(obs)?;
        Ok((0..obs.rows())
            .map(|i| self.logp_entropy(head.row(i), actions.row(i)).0)
            .collect())
    }

    /// Clipped surrogate plus entropy bonus on one minibatch, with gradients
    /// for the policy network and the log-std vector.
    pub fn policy_objective(
        &self,
        obs: &Matrix<f64>,
        act: &Matrix<f64>,
        old_logp: &[f64],
        adv: &[f64],
    ) -> Result<PolicyObjective> {
        let b = obs.rows() as f64;
        let (head, cache) = self.policy.forward(obs)?;
        let mut d_head = Matrix::zeros(head.rows(), head.cols());
        let mut d_log_std = vec![0.0; self.log_std.len()];
        let std: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();
        let mut o = PolicyObjective::default();
        for i in 0..obs.rows() {
            let (logp, ent) = self.logp_entropy(head.row(i), act.row(i));
            let ratio = (logp - old_logp[i]).exp();
            o.max_ratio_dev = o.max_ratio_dev.max((ratio - 1.0).abs());
            let a = adv[i];
            let clipped = ratio.clamp(1.0 - self.clip, 1.0 + self.clip);
            let unclipped_active = ratio * a <= clipped * a;
            o.surrogate -= (ratio * a).min(clipped * a) / b;
            o.entropy += ent / b;
            o.kl += (old_logp[i] - logp) / b;
            // d(loss)/d(logp); zero where the clip is active
            let g = if unclipped_active {
                -a * ratio / b
            } else {
                0.0
            };
            let row = d_head.row_mut(i);
            if self.log_std.is_empty() {
                let c = Categorical::new(head.row(i).to_vec());
                let h = c.entropy();
                let k = act.row(i)[0] as usize;
                for (j, (&pj, dj)) in c.probs().iter().zip(row.iter_mut()).enumerate() {
                    let onehot = if j == k { 1.0 } else { 0.0 };
                    *dj =
                        g * (onehot - pj) + self.entropy_coef * pj * (pj.max(1e-300).ln() + h) / b;
                }
            } else {
                for j in 0..row.len() {
                    let z = (act.row(i)[j] - head.row(i)[j]) / std[j];
                    row[j] = g * z / std[j];
                    d_log_std[j] += g * (z * z - 1.0);
                }
            }
        }
        for (j, d) in d_log_std.iter_mut().enumerate() {
            *d -= self.entropy_coef;
            // clamped log-std does not move
            let l = self.log_std[j];
            if (l <= LOG_STD_MIN && *d > 0.0) || (l >= LOG_STD_MAX && *d < 0.0) {
                *d = 0.0;
            }
        }
        o.loss = o.surrogate - self.entropy_coef * o.entropy;
        o.grads = Some(self.policy.backward(&cache, &d_head)?);
        o.d_log_std = d_log_std;
        Ok(o)
    }

    fn minibatch(&mut self, mb: &Batch<f64>, adv: &[f64], acc: &mut Accum) -> Result<()> {
        let obs = mb.get(OBS)?;
        let ret = mb.scalar(RET)?;
        let b = mb.len() as f64;
        let o = self.policy_objective(obs, mb.get(ACT)?, mb.scalar(LOGP)?, adv)?;
        acc.policy_loss += o.surrogate;
        acc.entropy += o.entropy;
        acc.kl += o.kl;
        acc.max_ratio_dev = acc.max_ratio_dev.max(o.max_ratio_dev);

        let (v, vcache) = self.value.forward(obs)?;
        let mut d_v = Matrix::zeros(v.rows(), 1);
        for i in 0..mb.len() {
            let (l, g) = self.common.loss.value_grad(v.row(i)[0], ret[i]);
            acc.value_loss += l / b;
            d_v.row_mut(i)[0] = g / b;
        }

        let mut pg = o.grads.expect("objective fills gradients");
        let mut vg = self.value.backward(&vcache, &d_v)?;
        clip_global_norm(&mut [&mut pg], self.common.grad_clip);
        clip_global_norm(&mut [&mut vg], self.common.grad_clip);
        self.policy_opt
            .step_mlp(&mut self.policy, &pg, self.common.lr_policy)?;
        self.value_opt
            .step_mlp(&mut self.value, &vg, self.common.lr_value)?;
        if !self.log_std.is_empty() {
            self.log_std_opt.step(
                &mut [&mut self.log_std],
                &[&o.d_log_std],
                self.common.lr_policy,
            )?;
            self.log_std.iter_mut().for_each(|l| *l = clamp_log_std(*l));
        }
        acc.minibatches += 1;
        Ok(())
    }
}

/// Value and gradients of the policy part of the loss.
#[derive(Debug, Clone, Default)]
pub struct PolicyObjective {
    /// Surrogate minus the weighted entropy.
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub kl: f64,
    pub max_ratio_dev: f64,
    pub grads: Option<Grads<f64>>,
    pub d_log_std: Vec<f64>,
}

#[derive(Debug, Default)]
struct Accum {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
    max_ratio_dev: f64,
    minibatches: usize,
}

impl Agent for Ppo {
    fn kind(&self) -> &'static str {
        "ppo"
    }

    fn spaces(&self) -> &Spaces {
        &self.spaces
    }

    fn is_on_policy(&self) -> bool {
        true
    }

    fn act(&mut self, obs: &Matrix<f64>, mode: ActMode) -> Result<ActOutput> {
        check_obs(&self.spaces, obs)?;
        let head = self.policy.predict(obs)?;
        let values = self.values(obs)?;
        let n = obs.rows();
        let mut actions = Matrix::zeros(n, self.spaces.action.dim());
        let mut logp = Vec::with_capacity(n);
        for i in 0..n {
            if self.log_std.is_empty() {
                let c = Categorical::new(head.row(i).to_vec());
                let a = match mode {
                    ActMode::Explore => c.sample(&mut self.rng),
                    ActMode::Deterministic => c.mode(),
                };
                actions.row_mut(i)[0] = a as f64;
                logp.push(c.log_prob(a));
            } else {
                let g = DiagGaussian::new(head.row(i).to_vec(), self.log_std.clone());
                let a = match mode {
                    ActMode::Explore => g.sample_with_noise(&mut self.rng).0,
                    ActMode::Deterministic => g.mean().to_vec(),
                };
                logp.push(g.log_prob(&a));
                actions.row_mut(i).copy_from_slice(&a);
            }
        }
        Ok(ActOutput {
            actions,
            logp,
            values,
        })
    }

    fn values(&self, obs: &Matrix<f64>) -> Result<Vec<f64>> {
        check_obs(&self.spaces, obs)?;
        Ok(self.value.predict(obs)?.into_vec())
    }

    fn update(&mut self, batch: &Batch<f64>) -> Result<UpdateReport> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Insufficient("empty rollout".into()));
        }
        let mut adv = batch.scalar(ADV)?.to_vec();
        if self.normalize_advantages && n > 1 {
            normalize(&mut adv);
        }
        let mut acc = Accum::default();
        let mut first_dev = None;
        let mut idx: Vec<usize> = (0..n).collect();
        for _ in 0..self.n_epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(self.batch_size) {
                let mb = batch.select(chunk);
                let mb_adv: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
                self.minibatch(&mb, &mb_adv, &mut acc)?;
                first_dev.get_or_insert(acc.max_ratio_dev);
            }
        }
        self.updates += 1;
        let m = acc.minibatches as f64;
        let mut r = UpdateReport::default();
        r.push("policy_loss", acc.policy_loss / m);
        r.push("value_loss", acc.value_loss / m);
        r.push("entropy", acc.entropy / m);
        r.push("approx_kl", acc.kl / m);
        r.push("first_ratio_dev", first_dev.unwrap_or(0.0));
        if !self.policy.is_finite() || !self.value.is_finite() {
            return Err(Error::NonFinite("ppo parameters after update".into()));
        }
        r.checked()
    }

    fn batch_fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::new(OBS, self.spaces.obs_dim),
            FieldSpec::new(ACT, self.spaces.action.dim()),
            FieldSpec::new(LOGP, 1),
            FieldSpec::new(ADV, 1),
            FieldSpec::new(RET, 1),
        ]
    }

    fn networks(&self) -> Vec<(&'static str, &Mlp<f64>)> {
        vec![("policy", &self.policy), ("value", &self.value)]
    }

    fn n_updates(&self) -> usize {
        self.updates
    }
}
