use super::*;
use crate::config::ParamTree;
use serde_json::json;

fn params(v: serde_json::Value) -> ParamTree {
    ParamTree::from_value(v).unwrap()
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn cartpole_step_matches_hand_euler() {
    let mut c = CartPole::new(500);
    c.state = [0.1, -0.2, 0.03, 0.4];
    let (obs, r, term) = c.step(&[1.0], &mut rng());
    // independent evaluation of the cart-pole equations
    let (g, mc, mp, l, f, dt) = (9.8, 1.0, 0.1, 0.5, 10.0, 0.02);
    let (th, thd) = (0.03f64, 0.4f64);
    let m = mc + mp;
    let tmp = (f + mp * l * thd * thd * th.sin()) / m;
    let tha = (g * th.sin() - th.cos() * tmp) / (l * (4.0 / 3.0 - mp * th.cos().powi(2) / m));
    let xa = tmp - mp * l * tha * th.cos() / m;
    let want = [
        0.1 + dt * -0.2,
        -0.2 + dt * xa,
        th + dt * thd,
        thd + dt * tha,
    ];
    for (a, b) in obs.iter().zip(want) {
        assert!((a - b).abs() < 1e-14);
    }
    assert_eq!(r, 1.0);
    assert!(!term);
    c.state = [2.39, 1.0, 0.0, 0.0];
    assert!(c.step(&[1.0], &mut rng()).2);
}

#[test]
fn pendulum_hanging_at_rest_stays_put() {
    let mut p = Pendulum::new(200);
    p.theta = std::f64::consts::PI;
    p.theta_dot = 0.0;
    for _ in 0..200 {
        p.step(&[0.0], &mut rng());
    }
    assert!((p.theta - std::f64::consts::PI).abs() < 1e-10);
    assert!(p.theta_dot.abs() < 1e-10);
}

#[test]
fn pendulum_small_swing_tracks_fine_integrator() {
    use std::f64::consts::PI;
    let amp = 0.05;
    let mut p = Pendulum::new(200);
    p.theta = PI + amp;
    p.theta_dot = 0.0;
    // fine-step RK4 of theta'' = 1.5 g / l sin(theta)
    let f = |th: f64, w: f64| (w, 15.0 * th.sin());
    let (mut th, mut w) = (PI + amp, 0.0);
    let h = 1e-4;
    for _ in 0..20 {
        p.step(&[0.0], &mut rng());
        for _ in 0..500 {
            let k1 = f(th, w);
            let k2 = f(th + 0.5 * h * k1.0, w + 0.5 * h * k1.1);
            let k3 = f(th + 0.5 * h * k2.0, w + 0.5 * h * k2.1);
            let k4 = f(th + h * k3.0, w + h * k3.1);
            th += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            w += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        // the coarse semi-implicit step keeps a bounded phase error
        assert!((p.theta - th).abs() < 0.25 * amp, "{} vs {}", p.theta, th);
    }
    // energy of the small oscillation is conserved by the symplectic step
    let energy = |t: f64, v: f64| 0.5 * v * v + 15.0 * (1.0 + t.cos());
    assert!(
        (energy(p.theta, p.theta_dot) - energy(PI + amp, 0.0)).abs()
            < 0.05 * energy(PI + amp, 0.0) + 1e-3
    );
}

#[test]
fn pendulum_reward_uses_pre_step_state() {
    let mut p = Pendulum::new(200);
    p.theta = 0.5;
    p.theta_dot = 1.0;
    let (_, r, _) = p.step(&[3.0], &mut rng());
    assert!((r + (0.25 + 0.1 + 0.001 * 4.0)).abs() < 1e-12);
}

#[test]
fn lorenz_uncontrolled_matches_reference_rk4() {
    let mut l = Lorenz::new(400);
    let mut r = rng();
    let start = l.reset(&mut r);
    let mut s = [start[0], start[1], start[2]];
    let deriv = |s: [f64; 3]| {
        [
            10.0 * (s[1] - s[0]),
            s[0] * (28.0 - s[2]) - s[1],
            s[0] * s[1] - 8.0 / 3.0 * s[2],
        ]
    };
    let h = 0.01;
    for _ in 0..100 {
        let (obs, _, _) = l.step(&[0.0], &mut r);
        for _ in 0..5 {
            let k1 = deriv(s);
            let k2 = deriv(std::array::from_fn(|i| s[i] + h / 2.0 * k1[i]));
            let k3 = deriv(std::array::from_fn(|i| s[i] + h / 2.0 * k2[i]));
            let k4 = deriv(std::array::from_fn(|i| s[i] + h * k3[i]));
            s = std::array::from_fn(|i| {
                s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            });
        }
        for i in 0..3 {
            assert!(
                (obs[i] - s[i]).abs() < 1e-8,
                "component {i}: {} vs {}",
                obs[i],
                s[i]
            );
        }
    }
}

#[test]
fn lorenz_reward_sign_and_control_channel() {
    let d0 = lorenz_derivative([1.0, 2.0, 3.0], 0.0);
    let d1 = lorenz_derivative([1.0, 2.0, 3.0], 2.5);
    assert_eq!(d0[0], d1[0]);
    assert_eq!(d1[1] - d0[1], 2.5);
    assert_eq!(d0[2], d1[2]);
    let mut l = Lorenz::new(400);
    l.state = [-5.0, -5.0, 20.0];
    assert_eq!(l.step(&[0.0], &mut rng()).1, 1.0);
    l.state = [5.0, 5.0, 20.0];
    assert_eq!(l.step(&[0.0], &mut rng()).1, -1.0);
}

#[test]
fn chain_windows_and_euler_step() {
    let mut c = Chain::new(4, 3).unwrap();
    c.reset(&mut rng());
    c.x = vec![1.0, 2.0, 3.0, 4.0];
    let obs = c.observation();
    assert_eq!(
        obs,
        vec![4.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 4.0, 1.0]
    );
    assert_eq!(c.spaces().obs_dim, 12);
    assert_eq!(c.local_obs_dim(), Some(3));
    let x0 = c.x.clone();
    let d: Vec<f64> = (0..4).map(|i| c.disturbance(i)).collect();
    let a = [0.5, -0.5, 2.0, 0.0];
    let (_, r, term) = c.step(&a, &mut rng());
    for i in 0..4 {
        let (l, rr) = (x0[(i + 3) % 4], x0[(i + 1) % 4]);
        let want = x0[i] + 0.1 * (-x0[i] + 0.25 * (l + rr) + a[i].clamp(-1.0, 1.0) + d[i]);
        assert!((c.x[i] - want).abs() < 1e-14);
    }
    assert!((r + c.x.iter().map(|v| v.abs()).sum::<f64>() / 4.0).abs() < 1e-14);
    assert!(!term);
    assert!(Chain::new(3, 2).is_err());
}

#[test]
fn time_limit_truncates_without_terminating() {
    let p = params(json!({"extra": {"max_steps": 5}}));
    let mut env = make_env("pendulum", &p, 3).unwrap();
    env.reset().unwrap();
    for i in 1..=5 {
        let r = env.step(&[0.0]).unwrap();
        assert!(!r.terminal);
        assert_eq!(r.truncated, i == 5);
    }
}

#[test]
fn out_of_space_actions_are_rejected() {
    let mut env = make_env("cartpole", &ParamTree::new(), 0).unwrap();
    env.reset().unwrap();
    assert!(env.step(&[2.0]).is_err());
    assert!(env.step(&[0.5]).is_err());
    assert!(env.step(&[1.0]).is_ok());
    let mut env = make_env("pendulum", &ParamTree::new(), 0).unwrap();
    env.reset().unwrap();
    assert!(env.step(&[2.5]).is_err());
    assert!(env.step(&[0.0, 0.0]).is_err());
}

#[test]
fn unknown_environment_is_reported() {
    let err = make_env("mountaincar", &ParamTree::new(), 0).unwrap_err();
    assert_eq!(err.to_string(), "Unknown key provided: mountaincar");
}

#[test]
fn rescale_action_round_trip() {
    let s = Spaces {
        obs_dim: 1,
        action: ActionSpace::continuous(vec![-2.0, 0.0], vec![2.0, 10.0]).unwrap(),
    };
    assert_eq!(rescale_action(&[-1.0, 1.0], &s).unwrap(), vec![-2.0, 10.0]);
    assert_eq!(rescale_action(&[5.0, -7.0], &s).unwrap(), vec![2.0, 0.0]);
    let a = rescale_action(&[0.3, -0.2], &s).unwrap();
    let back = normalize_action(&a, &s).unwrap();
    assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] + 0.2).abs() < 1e-12);
    assert!(rescale_action(&[0.0], &s).is_err());
}

#[test]
fn obs_transforms() {
    let t = ObsTransform::Scale {
        lo: vec![0.0, -4.0],
        hi: vec![2.0, 4.0],
    };
    assert_eq!(transform_obs(&[0.0, 4.0], &t).unwrap(), vec![-1.0, 1.0]);
    assert_eq!(transform_obs(&[1.0, 0.0], &t).unwrap(), vec![0.0, 0.0]);
    assert!(transform_obs(&[1.0], &t).is_err());
    let c = ObsTransform::Clip {
        lo: vec![-1.0],
        hi: vec![1.0],
    };
    assert_eq!(c.apply(&[3.0]).unwrap(), vec![1.0]);
    let bad = params(json!({"obs_transform": {"kind": "scale", "lo": [0.0], "hi": [1.0]}}));
    assert!(make_env("pendulum", &bad, 0).is_err());
    let ok =
        params(json!({"obs_transform": {"kind": "clip", "lo": [-1, -1, -1], "hi": [1, 1, 1]}}));
    let mut env = make_env("pendulum", &ok, 0).unwrap();
    assert!(env.reset().unwrap().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn pool_matches_sequential_workers() {
    let p = params(json!({"extra": {"max_steps": 7}}));
    let mut pool = WorkerPool::new("pendulum", &p, 3, 11, false).unwrap();
    let mut solo: Vec<Env> = worker_seeds(11, 3)
        .into_iter()
        .map(|s| make_env("pendulum", &p, s).unwrap())
        .collect();
    let mut cur: Vec<Vec<f64>> = solo.iter_mut().map(|e| e.reset().unwrap()).collect();
    for t in 0..20 {
        for i in 0..3 {
            assert_eq!(pool.observations().row(i), &cur[i][..]);
        }
        let actions: Vec<Vec<f64>> = (0..3)
            .map(|i| vec![((t + i) as f64 * 0.37).sin()])
            .collect();
        let out = pool.step(&actions).unwrap();
        for i in 0..3 {
            let r = solo[i].step(&actions[i]).unwrap();
            assert_eq!(out.results[i], r);
            cur[i] = if r.done() {
                solo[i].reset().unwrap()
            } else {
                r.obs
            };
        }
    }
}

#[test]
fn parallel_pool_equals_serial_pool() {
    let p = params(json!({"extra": {"n_act": 3, "max_steps": 9}}));
    let mut a = WorkerPool::new("chain", &p, 4, 5, false).unwrap();
    let mut b = WorkerPool::new("chain", &p, 4, 5, true).unwrap();
    for t in 0..30 {
        let actions: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![((t * 4 + i) as f64).cos(); 3])
            .collect();
        let (ra, rb) = (a.step(&actions).unwrap(), b.step(&actions).unwrap());
        assert_eq!(ra.results, rb.results);
        assert_eq!(ra.next_obs, rb.next_obs);
    }
    assert_eq!(a.local_obs_dim(), Some(3));
}
