//! Training loops: on-policy with bootstrapped parallel rollouts, off-policy
//! with a replay ring, and the separable variant where one shared agent drives
//! every actuator from its local observation.

pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use report::{
    average_files, average_runs, format_averaged, format_scores, parse_scores, read_scores,
    write_averaged, write_scores, AveragedCurve, CurvePoint, ScoreRecord, DEFAULT_GRID_POINTS,
    DEFAULT_WINDOW,
};

use crate::agents::{
    agent_factory, ActMode, Agent, AgentContext, ACT, ADV, LOGP, NEXT_OBS, OBS, RET, REW, TERM,
};
use crate::buffer::{Batch, FieldSpec, RingBuffer, StagingBuffer};
use crate::config::{Factory, RunConfig};
use crate::envs::{rescale_action, ActionSpace, Spaces, WorkerPool};
use crate::error::{Error, Result};
use crate::nn::io::write_mlp;
use crate::nn::Matrix;
use crate::returns::{gae_with_returns, BootstrapPlan, PlanDecision, Trajectory};
use crate::srl::{srl_factory, Phase, Representation, SrlModule, SrlState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub transitions: u64,
    pub episodes: u64,
    pub updates: u64,
    pub budget: u64,
}

impl Counter {
    pub fn exhausted(&self) -> bool {
        self.transitions >= self.budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    OnPolicy,
    OffPolicy,
    Separable,
}

pub fn trainer_factory() -> Factory<TrainerKind, ()> {
    let mut f = Factory::new("trainer");
    f.register("on_policy", |_, _| Ok(TrainerKind::OnPolicy));
    f.register("off_policy", |_, _| Ok(TrainerKind::OffPolicy));
    f.register("separable", |_, _| Ok(TrainerKind::Separable));
    f
}

/// What a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub score_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub records: Vec<ScoreRecord>,
    pub counter: Counter,
    /// Transitions consumed by each on-policy update, in order.
    pub update_sizes: Vec<usize>,
    /// Rows that entered the staging layer.
    pub rows_staged: u64,
    /// Latent size picked by representation learning, if configured.
    pub srl_latent_dim: Option<usize>,
    /// Agent updates made before the representation was fitted.
    pub srl_warmup_updates: Option<u64>,
}

/// Path of the score file of one seed.
pub fn score_path(out_dir: &Path, name: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("{name}_seed{seed}.dat"))
}

/// Trains into `run.output_dir`.
pub fn train(cfg: &RunConfig) -> Result<RunArtifacts> {
    let dir = PathBuf::from(cfg.run.str("output_dir")?);
    train_to(cfg, &dir)
}

/// Trains with `cfg`'s seed and writes the score file and checkpoints to `out_dir`.
pub fn train_to(cfg: &RunConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let kind = trainer_factory().create(&cfg.trainer_type(), &cfg.trainer, &())?;
    let mut s = Session::new(cfg, kind)?;
    match kind {
        TrainerKind::OnPolicy | TrainerKind::Separable => s.on_policy_loop()?,
        TrainerKind::OffPolicy => s.off_policy_loop()?,
    }
    s.finish(out_dir)
}

struct SrlSetup {
    module: SrlModule,
    state: SrlState,
    rep: Option<Representation>,
    seed: u64,
    warmup_updates: Option<u64>,
}

struct Session<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    pool: WorkerPool,
    env_spaces: Spaces,
    /// Agent rows per worker row: the actuator count when separable, else 1.
    split: usize,
    /// Observation width of one agent row before representation learning.
    agent_raw_dim: usize,
    agent_action: ActionSpace,
    agent_seed: u64,
    agent: Option<Box<dyn Agent>>,
    srl: Option<SrlSetup>,
    rng: ChaCha8Rng,
    counter: Counter,
    records: Vec<ScoreRecord>,
    ep_return: Vec<f64>,
    update_sizes: Vec<usize>,
    rows_staged: u64,
    reward_scale: f64,
    target: Option<(f64, usize)>,
    eval_every: u64,
    next_report: u64,
    walltime: Option<Instant>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a RunConfig, kind: TrainerKind) -> Result<Self> {
        let seed = cfg.seed();
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let (pool_seed, agent_seed, rng_seed, srl_seed) = (
            master.random::<u64>(),
            master.random::<u64>(),
            master.random::<u64>(),
            master.random::<u64>(),
        );
        let env = &cfg.environment;
        let n_envs = env.usize("n_envs")?;
        let pool = WorkerPool::new(
            &cfg.env_type(),
            env,
            n_envs,
            pool_seed,
            env.bool("parallel")?,
        )?;
        let env_spaces = pool.spaces();

        let (split, agent_raw_dim, agent_action) = match kind {
            TrainerKind::Separable => {
                let w = pool.local_obs_dim().ok_or_else(|| {
                    Error::Schema(format!(
                        "environment `{}` has no local observations",
                        cfg.env_type()
                    ))
                })?;
                let n_act = match &env_spaces.action {
                    ActionSpace::Continuous { lo, .. } => lo.len(),
                    ActionSpace::Discrete(_) => {
                        return Err(Error::Schema(
                            "separable training needs per-actuator continuous actions".into(),
                        ))
                    }
                };
                (n_act, w, ActionSpace::continuous(vec![-1.0], vec![1.0])?)
            }
            _ => {
                let action = match &env_spaces.action {
                    ActionSpace::Discrete(k) => ActionSpace::Discrete(*k),
                    ActionSpace::Continuous { lo, .. } => {
                        ActionSpace::continuous(vec![-1.0; lo.len()], vec![1.0; lo.len()])?
                    }
                };
                (1, env_spaces.obs_dim, action)
            }
        };

        let srl = match &cfg.srl {
            Some(p) => {
                if split > 1 {
                    return Err(Error::Schema(
                        "representation learning is not supported by the separable trainer".into(),
                    ));
                }
                let module = srl_factory().create(&p.str("type")?, p, &())?;
                let state = SrlState::new(module.warmup_samples);
                Some(SrlSetup {
                    module,
                    state,
                    rep: None,
                    seed: srl_seed,
                    warmup_updates: None,
                })
            }
            None => None,
        };

        let target = cfg
            .run
            .opt_f64("target_score")?
            .map(|t| (t, cfg.run.usize("target_window").unwrap_or(20)));
        let eval_every = cfg.run.u64("eval_every")?;
        let mut s = Self {
            cfg,
            seed,
            pool,
            env_spaces,
            split,
            agent_raw_dim,
            agent_action,
            agent_seed,
            agent: None,
            srl,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            counter: Counter {
                budget: cfg.run.u64("n_transitions")?,
                ..Counter::default()
            },
            records: Vec::new(),
            ep_return: vec![0.0; n_envs],
            update_sizes: Vec::new(),
            rows_staged: 0,
            reward_scale: cfg.agent.opt_f64("reward_scale")?.unwrap_or(1.0),
            target,
            eval_every,
            next_report: eval_every,
            walltime: cfg.run.bool("record_walltime")?.then(Instant::now),
        };
        s.maybe_activate()?;
        Ok(s)
    }

    fn n_envs(&self) -> usize {
        self.pool.n_envs()
    }

    fn in_srl_warmup(&self) -> bool {
        self.srl
            .as_ref()
            .is_some_and(|s| s.state.phase() == Phase::Warmup)
    }

    /// Builds the agent once representation learning (if any) is ready.
    fn maybe_activate(&mut self) -> Result<()> {
        if self.agent.is_some() || self.in_srl_warmup() {
            return Ok(());
        }
        let mut obs_dim = self.agent_raw_dim;
        if let Some(srl) = &mut self.srl {
            let data = srl.state.data()?;
            let rep = srl.module.fit(&data, srl.seed)?;
            obs_dim = rep.latent_dim();
            srl.rep = Some(rep);
            srl.warmup_updates = Some(self.counter.updates);
        }
        let ctx = AgentContext {
            spaces: Spaces {
                obs_dim,
                action: self.agent_action.clone(),
            },
            seed: self.agent_seed,
            n_epochs: self.cfg.trainer.usize("n_epochs")?,
            batch_size: self.cfg.trainer.usize("batch_size")?,
        };
        self.agent = Some(agent_factory().create(&self.cfg.agent_type(), &self.cfg.agent, &ctx)?);
        Ok(())
    }

    fn agent_mut(&mut self) -> &mut Box<dyn Agent> {
        self.agent.as_mut().expect("agent is built after warmup")
    }

    /// Worker observations as the agent sees them: encoded, then split per actuator.
    fn agent_obs(&self, raw: &Matrix<f64>) -> Result<Matrix<f64>> {
        let obs = match self.srl.as_ref().and_then(|s| s.rep.as_ref()) {
            Some(rep) => rep.transform(raw)?,
            None => raw.clone(),
        };
        if self.split == 1 {
            return Ok(obs);
        }
        let rows = obs.rows() * self.split;
        Matrix::from_vec(rows, self.agent_raw_dim, obs.into_vec())
    }

    fn random_actions(&mut self, rows: usize) -> Matrix<f64> {
        let dim = self.agent_action.dim();
        let data = match self.agent_action {
            ActionSpace::Discrete(k) => (0..rows)
                .map(|_| self.rng.random_range(0..k) as f64)
                .collect(),
            ActionSpace::Continuous { .. } => (0..rows * dim)
                .map(|_| self.rng.random_range(-1.0..=1.0))
                .collect(),
        };
        Matrix::from_vec(rows, dim, data).expect("sized above")
    }

    /// Agent action rows mapped onto each worker's action space.
    fn env_actions(&self, acts: &Matrix<f64>) -> Result<Vec<Vec<f64>>> {
        (0..self.n_envs())
            .map(|i| match &self.env_spaces.action {
                ActionSpace::Discrete(_) => Ok(acts.row(i).to_vec()),
                ActionSpace::Continuous { lo, hi } if self.split > 1 => Ok((0..self.split)
                    .map(|j| {
                        let a = acts.row(i * self.split + j)[0].clamp(-1.0, 1.0);
                        lo[j] + (a + 1.0) * 0.5 * (hi[j] - lo[j])
                    })
                    .collect()),
                ActionSpace::Continuous { .. } => rescale_action(acts.row(i), &self.env_spaces),
            })
            .collect()
    }

    /// Counts worker `i`'s step and closes its episode when it ended.
    fn account(&mut self, i: usize, reward: f64, done: bool) {
        self.counter.transitions += self.split as u64;
        self.ep_return[i] += reward;
        if done {
            self.counter.episodes += 1;
            let walltime = self.walltime.map_or(0.0, |t| t.elapsed().as_secs_f64());
            self.records.push(ScoreRecord {
                transitions: self.counter.transitions,
                episode: self.counter.episodes,
                score: self.ep_return[i],
                walltime,
            });
            self.ep_return[i] = 0.0;
        }
    }

    fn target_reached(&self) -> bool {
        match self.target {
            Some((score, window)) if self.records.len() >= window => {
                let tail = &self.records[self.records.len() - window..];
                tail.iter().map(|r| r.score).sum::<f64>() / window as f64 >= score
            }
            _ => false,
        }
    }

    fn done(&self) -> bool {
        self.counter.exhausted() || self.target_reached()
    }

    fn progress(&mut self) {
        if self.eval_every == 0 || self.counter.transitions < self.next_report {
            return;
        }
        while self.next_report <= self.counter.transitions {
            self.next_report += self.eval_every;
        }
        let recent = &self.records[self.records.len().saturating_sub(20)..];
        let mean = if recent.is_empty() {
            f64::NAN
        } else {
            recent.iter().map(|r| r.score).sum::<f64>() / recent.len() as f64
        };
        println!(
            "{} seed {}: {} transitions, {} episodes, {} updates, recent mean score {mean:.3}",
            self.cfg.name,
            self.seed,
            self.counter.transitions,
            self.counter.episodes,
            self.counter.updates
        );
    }

    /// One random-action step that only feeds representation learning.
    fn srl_warmup_step(&mut self) -> Result<()> {
        let raw = self.pool.observations().clone();
        let srl = self.srl.as_mut().expect("in warmup");
        srl.state.observe(&raw)?;
        let acts = self.random_actions(self.n_envs() * self.split);
        let env_acts = self.env_actions(&acts)?;
        let step = self.pool.step(&env_acts)?;
        for (i, r) in step.results.iter().enumerate() {
            self.account(i, r.reward, r.done());
        }
        self.maybe_activate()
    }

    fn on_policy_loop(&mut self) -> Result<()> {
        let n_slots = self.n_envs() * self.split;
        let gamma = self.cfg.agent.f64("gamma")?;
        let lambda = self.cfg.agent.opt_f64("gae_lambda")?.unwrap_or(0.95);
        let m = self.cfg.trainer.usize("update_size")?;
        let mut plan = BootstrapPlan::new(
            m,
            n_slots,
            self.pool.max_episode_steps(),
            self.cfg.trainer.bool("bootstrap")?,
        )?;
        let mut staging: Option<StagingBuffer<f64>> = None;
        while !self.done() {
            if self.in_srl_warmup() {
                self.srl_warmup_step()?;
                self.progress();
                continue;
            }
            let obs = self.agent_obs(self.pool.observations())?;
            let stage = match &mut staging {
                Some(s) => s,
                None => {
                    let d = obs.cols();
                    let a = self.agent_action.dim();
                    let fields = [
                        FieldSpec::new(OBS, d),
                        FieldSpec::new(ACT, a),
                        FieldSpec::new(LOGP, 1),
                        FieldSpec::new(REW, 1),
                        FieldSpec::new("val", 1),
                        FieldSpec::new(TERM, 1),
                        FieldSpec::new("trunc", 1),
                        FieldSpec::new("boot", 1),
                    ];
                    staging.insert(StagingBuffer::new(n_slots, &fields)?)
                }
            };
            let agent = self.agent.as_mut().expect("agent is built after warmup");
            let out = agent.act(&obs, ActMode::Explore)?;
            let env_acts = self.env_actions(&out.actions)?;
            let step = self.pool.step(&env_acts)?;
            let mut ended = vec![false; n_slots];
            for (i, r) in step.results.iter().enumerate() {
                let boot = if r.truncated {
                    let last = self.agent_obs(&Matrix::row_vector(&r.obs))?;
                    self.agent.as_ref().expect("built").values(&last)?
                } else {
                    vec![0.0; self.split]
                };
                for j in 0..self.split {
                    let v = i * self.split + j;
                    stage.store_ordered(
                        v,
                        &[
                            obs.row(v),
                            out.actions.row(v),
                            &[out.logp[v]],
                            &[r.reward * self.reward_scale],
                            &[out.values[v]],
                            &[f64::from(u8::from(r.terminal))],
                            &[f64::from(u8::from(r.truncated))],
                            &[boot[j]],
                        ],
                    )?;
                    ended[v] = r.done();
                    self.rows_staged += 1;
                }
            }
            for (i, r) in step.results.iter().enumerate() {
                self.account(i, r.reward, r.done());
            }
            if let PlanDecision::UpdateNow { truncate } = plan.step(&ended)? {
                let stage = staging.as_mut().expect("created above");
                let batch = self.rollout_batch(stage, &truncate, gamma, lambda)?;
                if !batch.is_empty() {
                    self.update_sizes.push(batch.len());
                    self.agent_mut().update(&batch)?;
                    self.counter.updates += 1;
                }
            }
            let fraction = self.counter.transitions as f64 / self.counter.budget.max(1) as f64;
            self.agent_mut().set_progress(fraction);
            self.progress();
        }
        Ok(())
    }

    /// Turns staged rows into an update batch: every finished segment plus the
    /// open tails of the `truncate` slots, whose returns are completed with
    /// the value of the current observation. Other open tails stay staged.
    fn rollout_batch(
        &mut self,
        stage: &mut StagingBuffer<f64>,
        truncate: &[usize],
        gamma: f64,
        lambda: f64,
    ) -> Result<Batch<f64>> {
        let agent = self.agent.as_ref().expect("built");
        let current = if truncate.is_empty() {
            Vec::new()
        } else {
            agent.values(&self.agent_obs(self.pool.observations())?)?
        };
        let fields = agent.batch_fields();
        let mut batch = Batch::empty(&fields);
        for v in 0..stage.n_envs() {
            let len = stage.env_len(v);
            let rew = stage.env_field(v, REW)?.to_vec();
            let val = stage.env_field(v, "val")?.to_vec();
            let term = stage.env_field(v, TERM)?.to_vec();
            let trunc = stage.env_field(v, "trunc")?.to_vec();
            let boot = stage.env_field(v, "boot")?.to_vec();
            let mut adv = Vec::with_capacity(len);
            let mut ret = Vec::with_capacity(len);
            let mut start = 0;
            for t in 0..len {
                if term[t] > 0.5 || trunc[t] > 0.5 {
                    let mut values = val[start..=t].to_vec();
                    values.push(boot[t]);
                    let traj = Trajectory::new(
                        rew[start..=t].to_vec(),
                        values,
                        term[t] > 0.5,
                        trunc[t] > 0.5,
                    )?;
                    let (a, r) = gae_with_returns(&traj, gamma, lambda)?;
                    adv.extend(a);
                    ret.extend(r);
                    start = t + 1;
                }
            }
            let take = if truncate.contains(&v) && start < len {
                let mut values = val[start..].to_vec();
                values.push(current[v]);
                let traj = Trajectory::new(rew[start..].to_vec(), values, false, true)?;
                let (a, r) = gae_with_returns(&traj, gamma, lambda)?;
                adv.extend(a);
                ret.extend(r);
                len
            } else {
                start
            };
            let rows = stage.drain_env_prefix(v, take)?;
            let (obs, act, logp) = (rows.get(OBS)?, rows.get(ACT)?, rows.scalar(LOGP)?);
            for t in 0..take {
                let row: Vec<&[f64]> = fields
                    .iter()
                    .map(|f| match f.name.as_str() {
                        OBS => Ok(obs.row(t)),
                        ACT => Ok(act.row(t)),
                        LOGP => Ok(&logp[t..=t]),
                        ADV => Ok(&adv[t..=t]),
                        RET => Ok(&ret[t..=t]),
                        other => Err(Error::Invalid(format!(
                            "on-policy rollouts have no `{other}` column"
                        ))),
                    })
                    .collect::<Result<_>>()?;
                batch.push_row(&row)?;
            }
        }
        Ok(batch)
    }

    fn off_policy_loop(&mut self) -> Result<()> {
        let warmup = self.cfg.trainer.u64("warmup")?;
        let update_every = self.cfg.trainer.u64("update_every")?;
        let batch_size = self.cfg.trainer.usize("batch_size")?;
        let capacity = self.cfg.agent.opt_usize("buffer_size")?.unwrap_or(50_000);
        let mut store: Option<(StagingBuffer<f64>, RingBuffer<f64>)> = None;
        let mut since_update = 0u64;
        while !self.done() {
            if self.in_srl_warmup() {
                self.srl_warmup_step()?;
                self.progress();
                continue;
            }
            let obs = self.agent_obs(self.pool.observations())?;
            let (stage, ring) = match &mut store {
                Some(s) => s,
                None => {
                    let fields = self.agent.as_ref().expect("built").batch_fields();
                    store.insert((
                        StagingBuffer::new(self.n_envs(), &fields)?,
                        RingBuffer::new(capacity, &fields)?,
                    ))
                }
            };
            let fraction = self.counter.transitions as f64 / self.counter.budget.max(1) as f64;
            let explore = self.counter.transitions < warmup;
            let acts = if explore {
                let n = self.n_envs();
                self.random_actions(n)
            } else {
                let agent = self.agent.as_mut().expect("built");
                agent.set_progress(fraction);
                agent.act(&obs, ActMode::Explore)?.actions
            };
            let env_acts = self.env_actions(&acts)?;
            let step = self.pool.step(&env_acts)?;
            let finals: Vec<&[f64]> = step.results.iter().map(|r| r.obs.as_slice()).collect();
            let next = self.agent_obs(&Matrix::from_rows(&finals)?)?;
            for (i, r) in step.results.iter().enumerate() {
                stage.store(
                    i,
                    &[
                        (OBS, obs.row(i)),
                        (ACT, acts.row(i)),
                        (REW, &[r.reward * self.reward_scale]),
                        (NEXT_OBS, next.row(i)),
                        (TERM, &[f64::from(u8::from(r.terminal))]),
                    ],
                )?;
            }
            stage.collect(ring)?;
            self.rows_staged += step.results.len() as u64;
            for (i, r) in step.results.iter().enumerate() {
                self.account(i, r.reward, r.done());
            }
            if self.counter.transitions >= warmup {
                since_update += self.n_envs() as u64;
                let (_, ring) = store.as_ref().expect("created above");
                while since_update >= update_every && ring.len() >= batch_size {
                    since_update -= update_every;
                    let batch = ring.sample(batch_size, &mut self.rng)?;
                    self.agent_mut().update(&batch)?;
                    self.counter.updates += 1;
                }
            }
            self.progress();
        }
        Ok(())
    }

    fn finish(self, out_dir: &Path) -> Result<RunArtifacts> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let name = &self.cfg.name;
        let header = vec![
            format!("config {name}"),
            format!("sha256 {}", self.cfg.hash),
            format!("seed {}", self.seed),
            "transitions episode score walltime".to_string(),
        ];
        let path = score_path(out_dir, name, self.seed);
        write_scores(&path, &header, &self.records)?;
        let mut checkpoints = Vec::new();
        if let Some(agent) = &self.agent {
            for (net, mlp) in agent.networks() {
                let p = out_dir.join(format!("{name}_seed{}_{net}.dknn", self.seed));
                let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                write_mlp(mlp, std::io::BufWriter::new(file)).map_err(|e| Error::io(&p, e))?;
                checkpoints.push(p);
            }
        }
        let mut srl_latent_dim = None;
        let mut srl_warmup_updates = None;
        if let Some(srl) = &self.srl {
            if let Some(rep) = &srl.rep {
                rep.save(&out_dir.join(format!("{name}_seed{}_srl", self.seed)))?;
                srl_latent_dim = Some(rep.latent_dim());
            }
            srl_warmup_updates = srl.warmup_updates;
        }
        Ok(RunArtifacts {
            score_path: path,
            checkpoints,
            records: self.records,
            counter: self.counter,
            update_sizes: self.update_sizes,
            rows_staged: self.rows_staged,
            srl_latent_dim,
            srl_warmup_updates,
        })
    }
}
