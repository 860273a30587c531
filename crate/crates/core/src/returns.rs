//! Discounted returns, generalized advantage estimation, TD targets and the
//! update planner used by parallel on-policy rollouts.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One contiguous piece of an episode.
///
/// `values` carries one more entry than `rewards`: the last one is the value of
/// the state reached after the final reward, used when the piece is cut short.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    pub terminal: bool,
    pub truncated: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(rewards: Vec<T>, values: Vec<T>, terminal: bool, truncated: bool) -> Result<Self> {
        let t = Self {
            rewards,
            values,
            terminal,
            truncated,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.terminal && self.truncated {
            return Err(Error::Invalid(
                "trajectory both terminal and truncated".into(),
            ));
        }
        if self.values.len() != self.rewards.len() + 1 {
            return Err(Error::shape(format!(
                "{} values for {} rewards, expected one extra bootstrap value",
                self.values.len(),
                self.rewards.len()
            )));
        }
        Ok(())
    }

    /// Value used past the last step: zero after a true termination.
    fn tail_value(&self) -> T {
        if self.terminal {
            T::zero()
        } else {
            self.values[self.rewards.len()]
        }
    }
}

fn check_unit(name: &str, x: impl Scalar) -> Result<()> {
    if !(x >= Scalar::lit(0.0) && x <= Scalar::lit(1.0)) {
        return Err(Error::Invalid(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

/// `G_t = r_t + gamma * G_{t+1}`, seeded with the bootstrap value unless terminal.
pub fn discounted_returns<T: Scalar>(traj: &Trajectory<T>, gamma: T) -> Result<Vec<T>> {
    traj.validate()?;
    check_unit("gamma", gamma)?;
    let mut out = vec![T::zero(); traj.len()];
    let mut g = traj.tail_value();
    for t in (0..traj.len()).rev() {
        g = traj.rewards[t] + gamma * g;
        out[t] = g;
    }
    Ok(out)
}

/// TD residuals `r_t + gamma * v_{t+1} - v_t`, with the future value dropped
/// only on the final step of a terminal trajectory.
pub fn td_residuals<T: Scalar>(traj: &Trajectory<T>, gamma: T) -> Result<Vec<T>> {
    traj.validate()?;
    let n = traj.len();
    Ok((0..n)
        .map(|t| {
            let next = if t + 1 == n {
                traj.tail_value()
            } else {
                traj.values[t + 1]
            };
            traj.rewards[t] + gamma * next - traj.values[t]
        })
        .collect())
}

/// Generalized advantage estimates `A_t = delta_t + gamma * lambda * A_{t+1}`.
pub fn gae<T: Scalar>(traj: &Trajectory<T>, gamma: T, lambda: T) -> Result<Vec<T>> {
    check_unit("gamma", gamma)?;
    check_unit("lambda", lambda)?;
    let deltas = td_residuals(traj, gamma)?;
    let mut adv = vec![T::zero(); deltas.len()];
    let mut running = T::zero();
    for t in (0..deltas.len()).rev() {
        running = deltas[t] + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Advantages and value targets (`A_t + v_t`) in one pass.
pub fn gae_with_returns<T: Scalar>(
    traj: &Trajectory<T>,
    gamma: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let adv = gae(traj, gamma, lambda)?;
    let ret = adv.iter().zip(&traj.values).map(|(&a, &v)| a + v).collect();
    Ok((adv, ret))
}

/// One-step target `r + gamma * next_value`, dropping the future only on true termination.
pub fn td_target<T: Scalar>(reward: T, terminal: bool, gamma: T, next_value: T) -> T {
    if terminal {
        reward
    } else {
        reward + gamma * next_value
    }
}

/// Shifts and scales in place to zero mean and unit (population) deviation.
pub fn normalize<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let n = T::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let scale = if std > T::lit(1e-12) { std } else { T::one() };
    xs.iter_mut().for_each(|x| *x = (*x - mean) / scale);
}

/// What the rollout loop should do after a synchronous step of all workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanDecision {
    Continue,
    /// Update now; the listed workers have unfinished episodes whose tails are
    /// bootstrapped with the value function.
    UpdateNow {
        truncate: Vec<usize>,
    },
}

/// Decides when a batch of parallel rollouts is ready for an on-policy update.
///
/// Without bootstrapping the update waits for `required` finished episodes and
/// unfinished ones carry over. With bootstrapping it fires as soon as
/// `required * nominal_len` transitions are in, whatever the worker count.
#[derive(Debug, Clone)]
pub struct BootstrapPlan {
    required: usize,
    n_envs: usize,
    nominal_len: usize,
    bootstrap: bool,
    transitions: usize,
    finished: usize,
    running: Vec<usize>,
}

impl BootstrapPlan {
    pub fn new(
        required: usize,
        n_envs: usize,
        nominal_len: usize,
        bootstrap: bool,
    ) -> Result<Self> {
        if required == 0 || n_envs == 0 || nominal_len == 0 {
            return Err(Error::Invalid(
                "bootstrap plan sizes must be positive".into(),
            ));
        }
        Ok(Self {
            required,
            n_envs,
            nominal_len,
            bootstrap,
            transitions: 0,
            finished: 0,
            running: vec![0; n_envs],
        })
    }

    /// Transition count that triggers a bootstrapped update.
    pub fn update_size(&self) -> usize {
        self.required * self.nominal_len
    }

    pub fn bootstrap(&self) -> bool {
        self.bootstrap
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    /// Transitions gathered since the last update.
    pub fn pending(&self) -> usize {
        self.transitions
    }

    /// Registers one step of every worker; `ended[i]` is true when worker `i`'s
    /// episode finished on this step (termination or time limit).
    pub fn step(&mut self, ended: &[bool]) -> Result<PlanDecision> {
        if ended.len() != self.n_envs {
            return Err(Error::shape(format!(
                "{} step flags for {} workers",
                ended.len(),
                self.n_envs
            )));
        }
        self.transitions += self.n_envs;
        for (run, &done) in self.running.iter_mut().zip(ended) {
            if done {
                self.finished += 1;
                *run = 0;
            } else {
                *run += 1;
            }
        }
        let ready = if self.bootstrap {
            self.transitions >= self.update_size()
        } else {
            self.finished >= self.required
        };
        if !ready {
            return Ok(PlanDecision::Continue);
        }
        let truncate = if self.bootstrap {
            let open: Vec<usize> = (0..self.n_envs).filter(|&i| self.running[i] > 0).collect();
            self.running.iter_mut().for_each(|r| *r = 0);
            self.transitions = 0;
            open
        } else {
            // unfinished episodes stay staged for the next cycle
            self.transitions = self.running.iter().sum();
            Vec::new()
        };
        self.finished = 0;
        Ok(PlanDecision::UpdateNow { truncate })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn traj(rewards: &[f64], values: &[f64], terminal: bool, truncated: bool) -> Trajectory<f64> {
        Trajectory::new(rewards.to_vec(), values.to_vec(), terminal, truncated).unwrap()
    }

    /// Brute-force double sum `sum_k (gamma lambda)^k delta_{t+k}` with the residuals
    /// written out independently of `td_residuals`.
    fn brute_gae(t: &Trajectory<f64>, gamma: f64, lambda: f64) -> Vec<f64> {
        let n = t.rewards.len();
        let delta: Vec<f64> = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let next = if last && t.terminal {
                    0.0
                } else {
                    t.values[i + 1]
                };
                t.rewards[i] + gamma * next - t.values[i]
            })
            .collect();
        (0..n)
            .map(|i| {
                (i..n)
                    .map(|k| (gamma * lambda).powi((k - i) as i32) * delta[k])
                    .sum()
            })
            .collect()
    }

    fn random_traj(rng: &mut ChaCha8Rng, len: usize) -> Trajectory<f64> {
        let rewards = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values = (0..=len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let kind = rng.random_range(0..3);
        Trajectory::new(rewards, values, kind == 0, kind == 1).unwrap()
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::new(vec![1.0], vec![0.0, 0.0], true, true).is_err());
        assert!(Trajectory::new(vec![1.0], vec![0.0], true, false).is_err());
    }

    #[test]
    fn returns_examples() {
        let t = traj(&[1.0, 2.0, 3.0], &[0.0; 4], true, false);
        assert_eq!(discounted_returns(&t, 0.0).unwrap(), vec![1.0, 2.0, 3.0]);
        let t = traj(&[1.0, 1.0, 1.0], &[9.0; 4], true, false);
        assert_eq!(discounted_returns(&t, 0.5).unwrap(), vec![1.75, 1.5, 1.0]);
        let t = traj(&[1.0], &[0.0, 2.0], false, true);
        assert!((discounted_returns(&t, 0.9).unwrap()[0] - 2.8).abs() < 1e-12);
        assert!(discounted_returns(&t, 1.5).is_err());
    }

    #[test]
    fn gae_lambda_zero_is_td_residual() {
        let t = traj(&[1.0, -0.5, 2.0], &[0.3, 0.1, -0.2, 4.0], false, true);
        let adv = gae(&t, 0.9, 0.0).unwrap();
        assert_eq!(adv, td_residuals(&t, 0.9).unwrap());
        assert!((adv[2] - (2.0 + 0.9 * 4.0 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_one_is_return_minus_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut t = random_traj(&mut rng, 30);
            t.terminal = true;
            t.truncated = false;
            let adv = gae(&t, 0.97, 1.0).unwrap();
            let g = discounted_returns(&t, 0.97).unwrap();
            for i in 0..t.len() {
                assert!((adv[i] - (g[i] - t.values[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gae_matches_brute_force_on_random_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let len = rng.random_range(1..=100);
            let t = random_traj(&mut rng, len);
            let (g, l) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
            let fast = gae(&t, g, l).unwrap();
            for (a, b) in fast.iter().zip(brute_gae(&t, g, l)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn terminal_tail_ignores_bootstrap_value() {
        let a = traj(&[1.0, 2.0], &[0.5, 0.5, 100.0], true, false);
        let b = traj(&[1.0, 2.0], &[0.5, 0.5, -7.0], true, false);
        assert_eq!(
            discounted_returns(&a, 0.9).unwrap(),
            discounted_returns(&b, 0.9).unwrap()
        );
        assert_eq!(gae(&a, 0.9, 0.95).unwrap(), gae(&b, 0.9, 0.95).unwrap());
    }

    #[test]
    fn td_target_examples() {
        assert_eq!(td_target(1.5, false, 0.0, 10.0), 1.5);
        assert_eq!(td_target(1.5, true, 0.99, 10.0), 1.5);
        assert!((td_target(1.0f64, false, 0.99, 10.0) - 10.9).abs() < 1e-12);
    }

    #[test]
    fn normalize_gives_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..10.0)).collect();
        normalize(&mut xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generic_over_f32() {
        let t = Trajectory::<f32>::new(vec![1.0, 1.0], vec![0.0, 0.0, 0.0], true, false).unwrap();
        assert_eq!(discounted_returns(&t, 0.5).unwrap(), vec![1.5, 1.0]);
    }

    /// Drives a plan with workers whose episodes last the given lengths.
    fn drive(plan: &mut BootstrapPlan, lens: &[usize], steps: usize) -> Vec<(usize, PlanDecision)> {
        let mut age = vec![0usize; lens.len()];
        let mut out = Vec::new();
        for s in 1..=steps {
            let ended: Vec<bool> = age
                .iter_mut()
                .zip(lens)
                .map(|(a, &l)| {
                    *a += 1;
                    if *a == l {
                        *a = 0;
                        true
                    } else {
                        false
                    }
                })
                .collect();
            let d = plan.step(&ended).unwrap();
            if d != PlanDecision::Continue {
                out.push((s, d));
            }
        }
        out
    }

    #[test]
    fn simultaneous_ends_trigger_both_modes_alike() {
        let mut on = BootstrapPlan::new(4, 4, 100, true).unwrap();
        let mut off = BootstrapPlan::new(4, 4, 100, false).unwrap();
        let a = drive(&mut on, &[100; 4], 300);
        let b = drive(&mut off, &[100; 4], 300);
        assert_eq!(a, b);
        assert_eq!(a[0], (100, PlanDecision::UpdateNow { truncate: vec![] }));
    }

    #[test]
    fn bootstrap_sixteen_workers_cut_at_update_size() {
        let mut on = BootstrapPlan::new(4, 16, 100, true).unwrap();
        let d = drive(&mut on, &[100; 16], 100);
        assert_eq!(d.len(), 4);
        assert_eq!(
            d[0],
            (
                25,
                PlanDecision::UpdateNow {
                    truncate: (0..16).collect()
                }
            )
        );
        // each trigger consumed exactly m * L transitions
        assert!(d.iter().enumerate().all(|(i, (s, _))| *s == 25 * (i + 1)));
    }

    #[test]
    fn vanilla_sixteen_workers_wait_for_full_episodes() {
        let mut off = BootstrapPlan::new(4, 16, 100, false).unwrap();
        let d = drive(&mut off, &[100; 16], 200);
        assert_eq!(
            d.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
            vec![100, 200]
        );
    }

    #[test]
    fn vanilla_mode_carries_partial_episodes() {
        let mut off = BootstrapPlan::new(2, 2, 10, false).unwrap();
        // worker 0 finishes every 3 steps, worker 1 every 7
        let d = drive(&mut off, &[3, 7], 7);
        assert_eq!(d[0].0, 6);
        // worker 1 carried 6 unfinished rows over the update at step 6, then both stepped once more
        assert_eq!(off.pending(), 6 + 2);
    }

    #[test]
    fn single_worker_identical_in_both_modes() {
        for m in 1..5 {
            let mut on = BootstrapPlan::new(m, 1, 50, true).unwrap();
            let mut off = BootstrapPlan::new(m, 1, 50, false).unwrap();
            assert_eq!(drive(&mut on, &[50], 1000), drive(&mut off, &[50], 1000));
        }
    }

    #[test]
    fn plan_rejects_wrong_width() {
        let mut p = BootstrapPlan::new(1, 2, 5, true).unwrap();
        assert!(p.step(&[true]).is_err());
    }

    proptest! {
        #[test]
        fn bootstrap_trigger_independent_of_worker_count(n in 1usize..=32, m in 1usize..6, len in 10usize..60) {
            let mut plan = BootstrapPlan::new(m, n, len, true).unwrap();
            let size = m * len;
            let mut total = 0;
            let mut last = 0;
            for _ in 0..(3 * size) {
                let d = plan.step(&vec![false; n]).unwrap();
                total += n;
                if d != PlanDecision::Continue {
                    let consumed = total - last;
                    prop_assert!(consumed >= size && consumed < size + n);
                    last = total;
                }
            }
        }
    }
}
