//! Planar three-revolute SCARA arm: forward kinematics, Jacobian, damped
//! least squares inverse kinematics and workspace reachability.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const NUM_JOINTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("target ({x:.6}, {y:.6}) is outside the reachable annulus [{r_min:.6}, {r_max:.6}] m")]
    Unreachable {
        x: f64,
        y: f64,
        r_min: f64,
        r_max: f64,
    },
    #[error("inverse kinematics did not converge after {iterations} iterations (residual {residual:.3e} m)")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Joint angles in radians, base joint first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState(pub [f64; NUM_JOINTS]);

impl JointState {
    pub const HOME: JointState = JointState([0.0; NUM_JOINTS]);

    pub fn new(angles: [f64; NUM_JOINTS]) -> Self {
        Self(angles)
    }

    pub fn angles(&self) -> [f64; NUM_JOINTS] {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    /// Linear interpolation `self + t * (other - self)`.
    pub fn lerp(&self, other: &JointState, t: f64) -> JointState {
        let mut out = [0.0; NUM_JOINTS];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] + t * (other.0[i] - self.0[i]);
        }
        JointState(out)
    }

    pub fn max_abs_diff(&self, other: &JointState) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Planar end-effector position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EePose {
    pub x: f64,
    pub y: f64,
}

impl EePose {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &EePose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Geometric description of the arm as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotGeometry {
    pub link_lengths: [f64; NUM_JOINTS],
    pub joint_limits: [[f64; 2]; NUM_JOINTS],
    pub base_position: [f64; 2],
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            link_lengths: [0.4, 0.3, 0.2],
            joint_limits: [[-PI, PI]; NUM_JOINTS],
            base_position: [0.0, 0.0],
        }
    }
}

impl RobotGeometry {
    fn validate(&self) -> Result<(), KinematicsError> {
        for (i, l) in self.link_lengths.iter().enumerate() {
            if !(l.is_finite() && *l > 0.0) {
                return Err(KinematicsError::InvalidModel(format!(
                    "link_lengths[{i}] must be positive and finite, got {l}"
                )));
            }
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint_limits[{i}] must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if !self.base_position.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidModel("base_position must be finite".into()));
        }
        Ok(())
    }

    /// Canonical text form hashed into the model digest. `{:?}` on f64 is the
    /// shortest round-tripping representation, so equal values give equal text.
    fn canonical(&self) -> String {
        let l = self.link_lengths;
        let j = self.joint_limits;
        let b = self.base_position;
        format!(
            "link_lengths=[{:?},{:?},{:?}];joint_limits=[[{:?},{:?}],[{:?},{:?}],[{:?},{:?}]];base_position=[{:?},{:?}]",
            l[0], l[1], l[2], j[0][0], j[0][1], j[1][0], j[1][1], j[2][0], j[2][1], b[0], b[1]
        )
    }
}

/// A validated arm model carrying the content digest of its geometry.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "RobotGeometry", into = "RobotGeometry")]
pub struct RobotModel {
    geometry: RobotGeometry,
    digest: String,
    radii: OnceLock<(f64, f64)>,
}

impl fmt::Debug for RobotModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RobotModel")
            .field("link_lengths", &self.geometry.link_lengths)
            .field("joint_limits", &self.geometry.joint_limits)
            .field("base_position", &self.geometry.base_position)
            .field("digest", &self.digest)
            .finish()
    }
}

impl PartialEq for RobotModel {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
    }
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::new(RobotGeometry::default()).expect("default geometry is valid")
    }
}

impl TryFrom<RobotGeometry> for RobotModel {
    type Error = KinematicsError;

    fn try_from(geometry: RobotGeometry) -> Result<Self, Self::Error> {
        Self::new(geometry)
    }
}

impl From<RobotModel> for RobotGeometry {
    fn from(model: RobotModel) -> Self {
        model.geometry
    }
}

impl RobotModel {
    pub fn new(geometry: RobotGeometry) -> Result<Self, KinematicsError> {
        geometry.validate()?;
        let hash = Sha256::digest(geometry.canonical().as_bytes());
        let digest = hash.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            geometry,
            digest,
            radii: OnceLock::new(),
        })
    }

    pub fn with_link_lengths(link_lengths: [f64; NUM_JOINTS]) -> Result<Self, KinematicsError> {
        Self::new(RobotGeometry {
            link_lengths,
            ..RobotGeometry::default()
        })
    }

    pub fn geometry(&self) -> &RobotGeometry {
        &self.geometry
    }

    pub fn link_lengths(&self) -> [f64; NUM_JOINTS] {
        self.geometry.link_lengths
    }

    pub fn joint_limits(&self) -> [[f64; 2]; NUM_JOINTS] {
        self.geometry.joint_limits
    }

    pub fn base(&self) -> EePose {
        let [x, y] = self.geometry.base_position;
        EePose { x, y }
    }

    /// Lowercase hex SHA-256 of the canonical geometry.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn reach(&self) -> f64 {
        self.geometry.link_lengths.iter().sum()
    }

    pub fn within_limits(&self, q: &JointState) -> bool {
        q.0.iter()
            .zip(self.geometry.joint_limits.iter())
            .all(|(a, [lo, hi])| *a >= *lo && *a <= *hi)
    }

    /// Saturates every joint at its limits.
    pub fn clamp_limits(&self, q: &JointState) -> JointState {
        let mut out = q.0;
        for (a, [lo, hi]) in out.iter_mut().zip(self.geometry.joint_limits.iter()) {
            *a = a.clamp(*lo, *hi);
        }
        JointState(out)
    }

    /// Maps angles back into the limits. Joints whose range spans a full turn
    /// are wrapped (FK is 2π-periodic), the rest are clamped.
    pub fn wrap_limits(&self, q: &JointState) -> JointState {
        let mut out = q.0;
        for (a, [lo, hi]) in out.iter_mut().zip(self.geometry.joint_limits.iter()) {
            if *a >= *lo && *a <= *hi {
                continue;
            }
            if hi - lo >= TAU {
                *a = (lo + (*a - lo).rem_euclid(TAU)).min(*hi);
            } else {
                *a = a.clamp(*lo, *hi);
            }
        }
        JointState(out)
    }

    /// Inner and outer workspace radii around the base, from a 1° grid over
    /// the two distal joints. The base joint only rotates the arm, so the
    /// radius does not depend on it. Computed once per model.
    pub fn workspace_radii(&self) -> (f64, f64) {
        *self.radii.get_or_init(|| {
            let l = self.geometry.link_lengths;
            let g2 = joint_grid(self.geometry.joint_limits[1]);
            let g3 = joint_grid(self.geometry.joint_limits[2]);
            let mut r_min = f64::INFINITY;
            let mut r_max: f64 = 0.0;
            for &a in &g2 {
                for &b in &g3 {
                    let x = l[0] + l[1] * a.cos() + l[2] * (a + b).cos();
                    let y = l[1] * a.sin() + l[2] * (a + b).sin();
                    let r = x.hypot(y);
                    r_min = r_min.min(r);
                    r_max = r_max.max(r);
                }
            }
            // Full extension, when admissible, is exact rather than a rounded cosine sum.
            if g2.contains(&0.0) && g3.contains(&0.0) {
                r_max = self.reach();
            }
            (r_min, r_max)
        })
    }
}

fn joint_grid([lo, hi]: [f64; 2]) -> Vec<f64> {
    let step = 1f64.to_radians();
    let n = ((hi - lo) / step).ceil() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| (lo + k as f64 * step).min(hi)).collect();
    if lo < 0.0 && hi > 0.0 {
        grid.push(0.0);
    }
    grid
}

/// End-effector position of the planar chain.
pub fn forward_kinematics(model: &RobotModel, q: &JointState) -> EePose {
    let l = model.geometry.link_lengths;
    let base = model.base();
    let mut theta = 0.0;
    let (mut x, mut y) = (base.x, base.y);
    for i in 0..NUM_JOINTS {
        theta += q.0[i];
        x += l[i] * theta.cos();
        y += l[i] * theta.sin();
    }
    EePose { x, y }
}

/// Closed-form 2x3 positional Jacobian, rows are (x, y).
pub fn jacobian(model: &RobotModel, q: &JointState) -> [[f64; NUM_JOINTS]; 2] {
    let l = model.geometry.link_lengths;
    let mut theta = [0.0; NUM_JOINTS];
    let mut acc = 0.0;
    for i in 0..NUM_JOINTS {
        acc += q.0[i];
        theta[i] = acc;
    }
    let mut j = [[0.0; NUM_JOINTS]; 2];
    for k in 0..NUM_JOINTS {
        for i in k..NUM_JOINTS {
            j[0][k] -= l[i] * theta[i].sin();
            j[1][k] += l[i] * theta[i].cos();
        }
    }
    j
}

pub fn is_reachable(model: &RobotModel, target: &EePose) -> bool {
    let (r_min, r_max) = model.workspace_radii();
    let r = target.distance(&model.base());
    r.is_finite() && r >= r_min - REACH_SLACK && r <= r_max + REACH_SLACK
}

// Absorbs rounding in the link-length sum (0.4 + 0.3 + 0.2 < 0.9 in f64).
const REACH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    /// Position tolerance in meters.
    pub tol: f64,
    pub max_iters: usize,
    /// Damping factor λ of the damped least squares step.
    pub damping: f64,
    /// Infinity-norm clamp on a single joint update, rad.
    pub max_step: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            damping: 0.05,
            max_step: 0.2,
        }
    }
}

const DAMPING_REF_RESIDUAL: f64 = 1e-2;

/// Damped least squares: Δq = Jᵀ(JJᵀ + λ²I)⁻¹e, iterated until the position
/// error drops below `params.tol`. The returned configuration is checked
/// against forward kinematics before it is handed back.
pub fn inverse_kinematics(
    model: &RobotModel,
    target: &EePose,
    q0: &JointState,
    params: &IkParams,
) -> Result<JointState, KinematicsError> {
    if !is_reachable(model, target) {
        let (r_min, r_max) = model.workspace_radii();
        return Err(KinematicsError::Unreachable {
            x: target.x,
            y: target.y,
            r_min,
            r_max,
        });
    }
    let lambda2_max = params.damping * params.damping;
    let mut q = model.wrap_limits(q0);
    let mut residual = f64::INFINITY;
    for _ in 0..=params.max_iters {
        let p = forward_kinematics(model, &q);
        let e = [target.x - p.x, target.y - p.y];
        residual = e[0].hypot(e[1]);
        if residual <= params.tol {
            debug_assert!(forward_kinematics(model, &q).distance(target) <= params.tol);
            return Ok(q);
        }
        let j = jacobian(model, &q);
        // Damping shrinks with the residual so convergence stays linear at
        // the outer boundary, where the radial singular value vanishes.
        let lambda2 = lambda2_max * (residual / DAMPING_REF_RESIDUAL).min(1.0);
        // A = JJᵀ + λ²I (symmetric 2x2), solve A w = e.
        let mut a = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                a[r][c] = (0..NUM_JOINTS).map(|k| j[r][k] * j[c][k]).sum::<f64>();
            }
            a[r][r] += lambda2;
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let w = [
            (a[1][1] * e[0] - a[0][1] * e[1]) / det,
            (a[0][0] * e[1] - a[1][0] * e[0]) / det,
        ];
        let mut dq = [0.0; NUM_JOINTS];
        for (k, d) in dq.iter_mut().enumerate() {
            *d = j[0][k] * w[0] + j[1][k] * w[1];
        }
        let norm_inf = dq.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        if norm_inf > params.max_step {
            let s = params.max_step / norm_inf;
            dq.iter_mut().for_each(|d| *d *= s);
        }
        for (qi, d) in q.0.iter_mut().zip(dq) {
            *qi += d;
        }
        q = model.wrap_limits(&q);
    }
    Err(KinematicsError::NotConverged {
        iterations: params.max_iters,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
        }};
    }

    #[test]
    fn fully_extended_along_x() {
        let m = RobotModel::default();
        let p = forward_kinematics(&m, &JointState::HOME);
        assert_close!(p.x, 0.9, 1e-15);
        assert_close!(p.y, 0.0, 1e-15);
    }

    #[test]
    fn rotated_full_extension() {
        let m = RobotModel::default();
        let p = forward_kinematics(&m, &JointState([PI / 2.0, 0.0, 0.0]));
        assert_close!(p.x, 0.0, 1e-15);
        assert_close!(p.y, 0.9, 1e-15);
    }

    #[test]
    fn jacobian_at_zero_configuration() {
        let m = RobotModel::default();
        let j = jacobian(&m, &JointState::HOME);
        for k in 0..3 {
            assert_close!(j[0][k], 0.0, 1e-15);
        }
        assert_close!(j[1][0], 0.9, 1e-15);
        assert_close!(j[1][1], 0.5, 1e-15);
        assert_close!(j[1][2], 0.2, 1e-15);
    }

    #[test]
    fn collinear_links_give_rank_one_jacobian() {
        let m = RobotModel::default();
        for q1 in [0.0, 0.7, -2.0] {
            let j = jacobian(&m, &JointState([q1, 0.0, 0.0]));
            // All columns parallel: every 2x2 minor vanishes.
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let minor = j[0][a] * j[1][b] - j[0][b] * j[1][a];
                    assert_close!(minor, 0.0, 1e-12);
                }
            }
        }
    }

    #[test]
    fn reachability_boundary() {
        let m = RobotModel::default();
        assert!(is_reachable(&m, &EePose::new(0.9, 0.0)));
        assert!(!is_reachable(&m, &EePose::new(0.91, 0.0)));
        assert!(!is_reachable(&m, &EePose::new(f64::NAN, 0.0)));
    }

    #[test]
    fn ik_rejects_outside_workspace() {
        let m = RobotModel::default();
        let err = inverse_kinematics(&m, &EePose::new(1.0, 0.2), &JointState::HOME, &IkParams::default())
            .unwrap_err();
        assert!(matches!(err, KinematicsError::Unreachable { .. }));
    }

    #[test]
    fn ik_fully_extended_target() {
        let m = RobotModel::default();
        let q = inverse_kinematics(
            &m,
            &EePose::new(0.9, 0.0),
            &JointState([0.03, -0.02, 0.04]),
            &IkParams::default(),
        )
        .unwrap();
        assert!(forward_kinematics(&m, &q).distance(&EePose::new(0.9, 0.0)) <= 1e-6);
        // Radial deficit 1e-6 m permits joint offsets of order sqrt(1e-6 / L).
        for a in q.0 {
            assert!(a.abs() < 1e-2, "{q:?}");
        }
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(RobotModel::with_link_lengths([0.4, 0.0, 0.2]).is_err());
        let g = RobotGeometry {
            joint_limits: [[-1.0, 1.0], [0.5, 0.5], [-1.0, 1.0]],
            ..RobotGeometry::default()
        };
        assert!(RobotModel::new(g).is_err());
    }

    #[test]
    fn digest_tracks_geometry() {
        let a = RobotModel::default();
        let b = RobotModel::default();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        assert!(a.digest().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        let c = RobotModel::with_link_lengths([0.4, 0.301, 0.2]).unwrap();
        assert_ne!(a.digest(), c.digest());
        let mut g = RobotGeometry::default();
        g.base_position = [0.0, 1e-9];
        assert_ne!(a.digest(), RobotModel::new(g).unwrap().digest());
    }

    #[test]
    fn toml_round_trip_keeps_digest() {
        let m = RobotModel::with_link_lengths([0.5, 0.25, 0.125]).unwrap();
        let text = toml::to_string(&m).unwrap();
        assert!(text.contains("link_lengths"));
        let back: RobotModel = toml::from_str(&text).unwrap();
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn wrap_and_clamp() {
        let m = RobotModel::default();
        let w = m.wrap_limits(&JointState([3.5, -3.5, 0.1]));
        assert!(m.within_limits(&w));
        assert_close!(w.0[0], 3.5 - TAU, 1e-12);
        let c = m.clamp_limits(&JointState([3.5, -3.5, 0.1]));
        assert_eq!(c.0, [PI, -PI, 0.1]);
    }
}
