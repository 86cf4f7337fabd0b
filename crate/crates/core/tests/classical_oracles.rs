use rand::Rng;
use rand_distr::{Distribution, Normal};
use scara_masa::benchmark::{rmse, TABLE_SIGMAS};
use scara_masa::classical::{estimate_state, plan_trajectory, ClassicalConfig};
use scara_masa::env::{reset, EnvConfig};
use scara_masa::kinematics::{forward_kinematics, inverse_kinematics, EePose, IkParams, JointState, RobotModel};
use scara_masa::noise::{derive_stream, stream_from_seed};
use scara_masa::{run_traditional, NoiseModel};

fn fk(l: [f64; 3], q: [f64; 3]) -> (f64, f64) {
    let (mut x, mut y, mut th) = (0.0, 0.0, 0.0);
    for i in 0..3 {
        th += q[i];
        x += l[i] * th.cos();
        y += l[i] * th.sin();
    }
    (x, y)
}

fn traditional_rmse(cfg: &EnvConfig, sigma: f64, episodes: usize, seed: u64) -> f64 {
    let ctrl = NoiseModel::uniform(sigma, seed).unwrap();
    let mut rng = derive_stream(seed, 1);
    let finals: Vec<f64> = (0..episodes)
        .map(|_| {
            run_traditional(cfg, &ctrl, &ClassicalConfig::default(), &mut rng)
                .unwrap()
                .final_distance
        })
        .collect();
    rmse(&finals).unwrap()
}

#[test]
fn noiseless_episode_lands_within_tolerance() {
    let cfg = EnvConfig::default();
    let log = run_traditional(&cfg, &NoiseModel::none(), &ClassicalConfig::default(), &mut stream_from_seed(0)).unwrap();
    assert!(log.final_distance <= 2.0 * IkParams::default().tol);
    assert!(log.final_distance < 1e-5);
    assert_eq!(log.realized, log.commanded);
}

#[test]
fn execution_rmse_matches_monte_carlo_oracle() {
    let cfg = EnvConfig::default();
    let sigma = 0.1;
    let plan = plan_trajectory(
        &cfg.model,
        &JointState::HOME,
        &cfg.goal,
        50,
        &IkParams::default(),
    )
    .unwrap();
    let q_goal = *plan.waypoints().last().unwrap();

    // Oracle: sample the final joint error directly and push it through FK.
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = stream_from_seed(31);
    let l = cfg.model.link_lengths();
    let n = 100_000;
    let mut sq = 0.0;
    for _ in 0..n {
        let q: [f64; 3] = std::array::from_fn(|j| q_goal.0[j] + normal.sample(&mut rng));
        let (x, y) = fk(l, q);
        sq += (x - cfg.goal.x).powi(2) + (y - cfg.goal.y).powi(2);
    }
    let oracle = (sq / n as f64).sqrt();
    let got = traditional_rmse(&cfg, sigma, 10_000, 3);
    assert!((got / oracle - 1.0).abs() <= 0.02, "pipeline {got} vs oracle {oracle}");
}

#[test]
fn estimation_error_matches_pushforward_oracle() {
    let sigma = 0.05;
    let cfg = EnvConfig {
        obs_noise: NoiseModel::uniform(sigma, 4).unwrap(),
        randomize_start: false,
        ..EnvConfig::default()
    };
    let truth = forward_kinematics(&cfg.model, &JointState::HOME);
    let n = 100_000;
    let mut rng = cfg.obs_noise.stream();
    let mut pipe = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, obs) = reset(&cfg, &mut rng).unwrap();
        let est = estimate_state(&cfg.model, &JointState(obs.q_noisy));
        pipe.push((est.x - truth.x, est.y - truth.y));
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut orng = stream_from_seed(32);
    let l = cfg.model.link_lengths();
    let oracle: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let (x, y) = fk(l, std::array::from_fn(|_| normal.sample(&mut orng)));
            (x - truth.x, y - truth.y)
        })
        .collect();
    let moments = |v: &[(f64, f64)]| {
        let m = v.len() as f64;
        let mx = v.iter().map(|p| p.0).sum::<f64>() / m;
        let my = v.iter().map(|p| p.1).sum::<f64>() / m;
        let sx = (v.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / m).sqrt();
        let sy = (v.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / m).sqrt();
        (mx, my, sx, sy)
    };
    let (a, b) = (moments(&pipe), moments(&oracle));
    // Mean x error is the second-order FK bias; y is symmetric.
    assert!((a.0 - b.0).abs() < 1e-4, "{a:?} vs {b:?}");
    assert!((a.1 - b.1).abs() < 1e-3, "{a:?} vs {b:?}");
    assert!((a.2 / b.2 - 1.0).abs() < 0.02 && (a.3 / b.3 - 1.0).abs() < 0.02, "{a:?} vs {b:?}");
}

#[test]
fn rmse_is_nondecreasing_over_the_grid() {
    let cfg = EnvConfig::default();
    let values: Vec<f64> = TABLE_SIGMAS.iter().map(|&s| traditional_rmse(&cfg, s, 1000, 5)).collect();
    for w in values.windows(2) {
        // Tolerates Monte Carlo error between neighbouring σ values.
        assert!(w[1] >= 0.97 * w[0], "{values:?}");
    }
    assert!(values[7] >= 10.0 * values[1]);
}

#[test]
fn plans_respect_limits_and_end_on_the_goal() {
    let m = RobotModel::default();
    let (r_min, r_max) = m.workspace_radii();
    let mut rng = stream_from_seed(33);
    let ik = IkParams::default();
    for _ in 0..200 {
        let r = rng.random_range(r_min.max(0.05)..r_max * 0.999);
        let phi = rng.random_range(-3.0..3.0f64);
        let goal = EePose::new(r * phi.cos(), r * phi.sin());
        let start = JointState(std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
        let plan = plan_trajectory(&m, &start, &goal, 50, &ik).unwrap();
        assert_eq!(plan.len(), 50);
        assert_eq!(plan.waypoints()[0], start);
        assert!(plan.waypoints().iter().all(|q| m.within_limits(q)));
        let end = forward_kinematics(&m, plan.waypoints().last().unwrap());
        assert!(end.distance(&goal) <= ik.tol);
    }
}

#[test]
fn plan_from_a_solution_is_constant() {
    let m = RobotModel::default();
    let goal = EePose::new(0.35, 0.45);
    let ik = IkParams::default();
    let q = inverse_kinematics(&m, &goal, &JointState::HOME, &ik).unwrap();
    let plan = plan_trajectory(&m, &q, &goal, 20, &ik).unwrap();
    assert!(plan.waypoints().iter().all(|w| *w == q));
    let two = plan_trajectory(&m, &JointState::HOME, &goal, 2, &ik).unwrap();
    assert_eq!(two.waypoints()[0], JointState::HOME);
    assert!(forward_kinematics(&m, &two.waypoints()[1]).distance(&goal) <= ik.tol);
}

#[test]
fn plan_ignores_controller_noise() {
    let cfg = EnvConfig::default();
    let base = run_traditional(&cfg, &NoiseModel::none(), &ClassicalConfig::default(), &mut stream_from_seed(9)).unwrap();
    for s in [0.01, 0.3] {
        let noisy = run_traditional(
            &cfg,
            &NoiseModel::uniform(s, 1).unwrap(),
            &ClassicalConfig::default(),
            &mut stream_from_seed(9),
        )
        .unwrap();
        assert_eq!(noisy.commanded, base.commanded);
        assert_ne!(noisy.realized, base.realized);
    }
}

#[test]
fn fixed_seed_gives_identical_logs() {
    let cfg = EnvConfig::default();
    let ctrl = NoiseModel::uniform(0.2, 8).unwrap();
    let a = run_traditional(&cfg, &ctrl, &ClassicalConfig::default(), &mut stream_from_seed(8)).unwrap();
    let b = run_traditional(&cfg, &ctrl, &ClassicalConfig::default(), &mut stream_from_seed(8)).unwrap();
    assert_eq!(a, b);
    for (q, p) in a.realized.iter().zip(&a.ee_trace) {
        assert_eq!(forward_kinematics(&cfg.model, q), *p);
    }
}
