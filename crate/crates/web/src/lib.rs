//! wasm-bindgen surface for the browser demo. Every export is a thin
//! wrapper over a plain function so the logic is testable natively.

use scara_masa::benchmark::{rmse, TABLE_SIGMAS};
use scara_masa::classical::ClassicalConfig;
use scara_masa::env::EnvConfig;
use scara_masa::kinematics::{forward_kinematics, inverse_kinematics, EePose, IkParams, JointState, RobotModel};
use scara_masa::noise::derive_stream;
use scara_masa::{run_traditional, NoiseModel};
use wasm_bindgen::prelude::*;

fn model(links: &[f64]) -> Result<RobotModel, String> {
    let l: [f64; 3] = links
        .try_into()
        .map_err(|_| format!("expected 3 link lengths, got {}", links.len()))?;
    RobotModel::with_link_lengths(l).map_err(|e| e.to_string())
}

/// Base, elbow, wrist and tool points of the arm at `q`, flattened as x,y pairs.
pub fn joint_points(model: &RobotModel, q: &JointState) -> [f64; 8] {
    let l = model.link_lengths();
    let b = model.base();
    let mut out = [0.0; 8];
    let (mut x, mut y, mut theta) = (b.x, b.y, 0.0);
    out[0] = x;
    out[1] = y;
    for i in 0..3 {
        theta += q.0[i];
        x += l[i] * theta.cos();
        y += l[i] * theta.sin();
        out[2 * i + 2] = x;
        out[2 * i + 3] = y;
    }
    out
}

/// IK toward (x, y) from `q0`. Returns `[q0, q1, q2, residual, points..]`.
pub fn solve_pose_impl(links: &[f64], x: f64, y: f64, q0: &[f64]) -> Result<Vec<f64>, String> {
    let m = model(links)?;
    let q0: [f64; 3] = q0.try_into().map_err(|_| "expected 3 start angles".to_string())?;
    let target = EePose::new(x, y);
    let q = inverse_kinematics(&m, &target, &JointState(q0), &IkParams::default()).map_err(|e| e.to_string())?;
    let mut out = q.0.to_vec();
    out.push(forward_kinematics(&m, &q).distance(&target));
    out.extend(joint_points(&m, &q));
    Ok(out)
}

fn env(links: &[f64], x: f64, y: f64) -> Result<EnvConfig, String> {
    let cfg = EnvConfig {
        model: model(links)?,
        goal: EePose::new(x, y),
        obs_noise: NoiseModel::none(),
        ..EnvConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// One plan-then-execute episode with command noise σ. Returns
/// `[final_distance, x0, y0, x1, y1, ..]` for the realized tool path.
pub fn traditional_run_impl(links: &[f64], x: f64, y: f64, sigma: f64, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = env(links, x, y)?;
    let ctrl = NoiseModel::uniform(sigma, seed).map_err(|e| e.to_string())?;
    let mut rng = derive_stream(seed, 0);
    let log = run_traditional(&cfg, &ctrl, &ClassicalConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let mut out = vec![log.final_distance];
    for p in &log.ee_trace {
        out.push(p.x);
        out.push(p.y);
    }
    Ok(out)
}

/// Classical-pipeline RMSE at each σ of the reference grid. Returns
/// `[σ0, rmse0, σ1, rmse1, ..]`.
pub fn traditional_sweep_impl(links: &[f64], x: f64, y: f64, episodes: usize, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = env(links, x, y)?;
    let episodes = episodes.max(1);
    let mut out = Vec::with_capacity(2 * TABLE_SIGMAS.len());
    for (i, &sigma) in TABLE_SIGMAS.iter().enumerate() {
        let ctrl = NoiseModel::uniform(sigma, seed).map_err(|e| e.to_string())?;
        let mut rng = derive_stream(seed, i as u64);
        let mut finals = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let log = run_traditional(&cfg, &ctrl, &ClassicalConfig::default(), &mut rng).map_err(|e| e.to_string())?;
            finals.push(log.final_distance);
        }
        out.push(sigma);
        out.push(rmse(&finals).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn solve_pose(links: &[f64], x: f64, y: f64, q0: &[f64]) -> Result<Vec<f64>, JsValue> {
    solve_pose_impl(links, x, y, q0).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn traditional_run(links: &[f64], x: f64, y: f64, sigma: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    traditional_run_impl(links, x, y, sigma, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn traditional_sweep(links: &[f64], x: f64, y: f64, episodes: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
    traditional_sweep_impl(links, x, y, episodes as usize, seed.into()).map_err(|e| JsValue::from_str(&e))
}
