//! Forward and closed-form inverse kinematics for six-axis arms with the
//! UR joint layout (three parallel shoulder/elbow/wrist-1 axes and a
//! non-spherical wrist), plus the geometric Jacobian and manipulability.
//!
//! Link transforms use standard Denavit-Hartenberg parameters:
//! `A_i = Rz(theta_i) * Tz(d_i) * Tx(a_i) * Rx(alpha_i)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use nalgebra::{Isometry3, Matrix6, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, JointConfig, Joints, Pose};

pub const ARM_FORMAT_VERSION: u32 = 1;

/// Tolerance used to accept an analytic branch after re-running forward kinematics.
pub const BRANCH_POSITION_TOL: f64 = 1e-7;
pub const BRANCH_ANGLE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("target pose is unreachable")]
    Unreachable,
    #[error("solution set is empty")]
    EmptySet,
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("arm geometry is not supported by the analytic solver: {0}")]
    UnsupportedGeometry(String),
    #[error("failed to read arm file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse arm file: {0}")]
    Parse(String),
    #[error("arm file format_version {found} is not supported (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, theta: f64) -> Isometry3<f64> {
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta + self.theta_offset);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let translation = Vector3::new(0.0, 0.0, self.d) + rz * Vector3::new(self.a, 0.0, 0.0);
        Isometry3::from_parts(Translation3::from(translation), rz * rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }
}

/// Collision primitive expressed in the frame of the link that carries it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn endpoints_in(&self, frame: &Isometry3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        (
            frame.transform_point(&self.a.into()).coords,
            frame.transform_point(&self.b.into()).coords,
        )
    }
}

/// Kinematic, limit and collision description of a six-joint arm.
///
/// `links` holds one capsule list per rigid body: index 0 is the fixed base,
/// index `i` (1..=6) moves with joint `i` and is expressed in DH frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub dh: [DhRow; 6],
    pub joint_limits: [JointLimit; 6],
    pub speed_limits: [f64; 6],
    pub links: Vec<Vec<Capsule>>,
    pub base_pose: Pose,
    pub singularity_threshold: f64,
    pub home: Joints,
}

impl ArmModel {
    /// UR3e geometry with a capsule approximation of the links.
    ///
    /// The default base rotation stands the arm up in a y-up world frame.
    pub fn ur3e() -> Self {
        let (d1, a2, a3, d4, d5, d6) = (0.15185, -0.24355, -0.2132, 0.13105, 0.08535, 0.0921);
        let row = |a, d, alpha| DhRow {
            a,
            d,
            alpha,
            theta_offset: 0.0,
        };
        let wide = JointLimit { min: -TAU, max: TAU };
        let elbow = JointLimit { min: -PI, max: PI };
        Self {
            dh: [
                row(0.0, d1, FRAC_PI_2),
                row(a2, 0.0, 0.0),
                row(a3, 0.0, 0.0),
                row(0.0, d4, FRAC_PI_2),
                row(0.0, d5, -FRAC_PI_2),
                row(0.0, d6, 0.0),
            ],
            joint_limits: [wide, wide, elbow, wide, wide, wide],
            speed_limits: [PI; 6],
            links: vec![
                vec![Capsule::new([0.0, 0.0, 0.06], [0.0, 0.0, d1], 0.045)],
                vec![Capsule::new([0.0, 0.0, 0.0], [0.0, 0.0, 0.12], 0.045)],
                vec![Capsule::new([-a2, 0.0, 0.12], [0.0, 0.0, 0.12], 0.04)],
                vec![Capsule::new([-a3, 0.0, 0.03], [0.0, 0.0, 0.03], 0.035)],
                vec![Capsule::new([0.0, -0.1, 0.0], [0.0, 0.0, 0.0], 0.03)],
                vec![Capsule::new([0.0, d5, 0.0], [0.0, 0.0, 0.0], 0.03)],
                vec![Capsule::new([0.0, 0.0, -d6], [0.0, 0.0, 0.05], 0.03)],
            ],
            base_pose: Pose::new(
                Vector3::zeros(),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -FRAC_PI_2),
            ),
            singularity_threshold: 1e-4,
            home: [0.0, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, 0.0],
        }
    }

    pub fn with_base_pose(mut self, base_pose: Pose) -> Self {
        self.base_pose = base_pose;
        self
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (i, lim) in self.joint_limits.iter().enumerate() {
            if !(lim.min < lim.max) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} limit min {} is not below max {}",
                    lim.min, lim.max
                )));
            }
        }
        for (i, s) in self.speed_limits.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} speed limit must be positive"
                )));
            }
        }
        if self.links.len() != 7 {
            return Err(KinematicsError::InvalidModel(format!(
                "expected 7 link bodies (base + 6), found {}",
                self.links.len()
            )));
        }
        for (i, caps) in self.links.iter().enumerate() {
            if caps.iter().any(|c| !(c.radius > 0.0)) {
                return Err(KinematicsError::InvalidModel(format!(
                    "link {i} has a capsule with non-positive radius"
                )));
            }
        }
        if !(self.singularity_threshold >= 0.0) {
            return Err(KinematicsError::InvalidModel(
                "singularity threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &Joints) -> bool {
        self.first_limit_violation(q).is_none()
    }

    pub fn first_limit_violation(&self, q: &Joints) -> Option<usize> {
        (0..6).find(|&i| !self.joint_limits[i].contains(q[i]))
    }

    /// Distance from the shoulder axis origin to the farthest reachable flange point.
    pub fn max_reach(&self) -> f64 {
        self.dh.iter().map(|r| r.a.abs() + r.d.abs()).sum::<f64>() - self.dh[0].d.abs()
    }

    /// World pose of the shoulder (frame 0 shifted up by `d1`).
    pub fn shoulder_position(&self) -> Vector3<f64> {
        self.base_pose.transform_point(&Vector3::new(0.0, 0.0, self.dh[0].d))
    }

    /// World frames of the base and of DH frames 1..=6.
    pub fn link_frames(&self, q: &Joints) -> [Isometry3<f64>; 7] {
        let mut frames = [Isometry3::identity(); 7];
        frames[0] = self.base_pose.to_isometry();
        for i in 0..6 {
            frames[i + 1] = frames[i] * self.dh[i].transform(q[i]);
        }
        frames
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, KinematicsError> {
        let file: ArmFile = toml::from_str(text).map_err(|e| KinematicsError::Parse(e.to_string()))?;
        file.into_model()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&ArmFile::from_model(self)).expect("arm model serializes")
    }
}

impl Default for ArmModel {
    fn default() -> Self {
        Self::ur3e()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArmFile {
    format_version: u32,
    #[serde(default = "default_singularity")]
    singularity_threshold: f64,
    base_pose: Pose,
    home: Option<Joints>,
    joints: Vec<JointEntry>,
    links: Vec<LinkEntry>,
}

fn default_singularity() -> f64 {
    1e-4
}

#[derive(Debug, Serialize, Deserialize)]
struct JointEntry {
    #[serde(flatten)]
    dh: DhRow,
    limits: [f64; 2],
    max_speed: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkEntry {
    capsules: Vec<Capsule>,
}

impl ArmFile {
    fn from_model(m: &ArmModel) -> Self {
        Self {
            format_version: ARM_FORMAT_VERSION,
            singularity_threshold: m.singularity_threshold,
            base_pose: m.base_pose,
            home: Some(m.home),
            joints: (0..6)
                .map(|i| JointEntry {
                    dh: m.dh[i],
                    limits: [m.joint_limits[i].min, m.joint_limits[i].max],
                    max_speed: m.speed_limits[i],
                })
                .collect(),
            links: m.links.iter().map(|c| LinkEntry { capsules: c.clone() }).collect(),
        }
    }

    fn into_model(self) -> Result<ArmModel, KinematicsError> {
        if self.format_version != ARM_FORMAT_VERSION {
            return Err(KinematicsError::FormatVersion {
                found: self.format_version,
                expected: ARM_FORMAT_VERSION,
            });
        }
        if self.joints.len() != 6 {
            return Err(KinematicsError::InvalidModel(format!(
                "expected exactly 6 joints, found {}",
                self.joints.len()
            )));
        }
        let dh = std::array::from_fn(|i| self.joints[i].dh);
        let joint_limits = std::array::from_fn(|i| JointLimit {
            min: self.joints[i].limits[0],
            max: self.joints[i].limits[1],
        });
        let speed_limits = std::array::from_fn(|i| self.joints[i].max_speed);
        let model = ArmModel {
            dh,
            joint_limits,
            speed_limits,
            links: self.links.into_iter().map(|l| l.capsules).collect(),
            base_pose: self.base_pose,
            singularity_threshold: self.singularity_threshold,
            home: self.home.unwrap_or([0.0; 6]),
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn forward_kinematics(model: &ArmModel, q: &Joints) -> Pose {
    Pose::from_isometry(&model.link_frames(q)[6])
}

/// One analytic branch that survived limit filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: Joints,
    /// Canonical branch index in `0..8` (shoulder, wrist, elbow sign bits).
    pub branch: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolutionSet {
    pub solutions: Vec<IkSolution>,
    pub target: Pose,
    pub selected_index: usize,
}

impl IkSolutionSet {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn selected(&self) -> Option<&IkSolution> {
        self.solutions.get(self.selected_index)
    }
}

/// Weighted joint-space distance used to order solutions (uniform weights).
pub fn joint_distance(a: &Joints, b: &Joints) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_analytic_layout(model: &ArmModel) -> Result<(), KinematicsError> {
    const TOL: f64 = 1e-12;
    let dh = &model.dh;
    let zero_a = [0, 3, 4, 5].iter().all(|&i| dh[i].a.abs() < TOL);
    let zero_d = dh[1].d.abs() < TOL && dh[2].d.abs() < TOL;
    let alphas = [FRAC_PI_2, 0.0, 0.0, FRAC_PI_2, -FRAC_PI_2, 0.0];
    let alpha_ok = dh.iter().zip(alphas).all(|(r, a)| (r.alpha - a).abs() < 1e-9);
    if zero_a && zero_d && alpha_ok && dh[5].d.abs() > TOL {
        Ok(())
    } else {
        Err(KinematicsError::UnsupportedGeometry(
            "expected UR-style layout (alpha = [pi/2, 0, 0, pi/2, -pi/2, 0], a1 = a4 = a5 = a6 = 0, d2 = d3 = 0)"
                .into(),
        ))
    }
}

/// All analytic branches for a flange pose given in the base frame, as raw
/// DH angles (offsets not yet removed). Entries are `(branch, theta)`.
fn analytic_branches(model: &ArmModel, flange: &Isometry3<f64>, wrist_hint: f64) -> Vec<(u8, Joints)> {
    let a2 = model.dh[1].a;
    let a3 = model.dh[2].a;
    let d4 = model.dh[3].d;
    let d6 = model.dh[5].d;
    let rot = flange.rotation.to_rotation_matrix();
    let m = rot.matrix();
    let p = flange.translation.vector;

    let wrist_center = p - m.column(2) * d6;
    let radial = wrist_center.x.hypot(wrist_center.y);
    if radial < d4.abs() - 1e-12 || radial == 0.0 {
        return Vec::new();
    }
    let psi = wrist_center.y.atan2(wrist_center.x);
    let phi = (d4 / radial).clamp(-1.0, 1.0).acos();

    let mut out = Vec::with_capacity(8);
    for (b1, s1) in [(0u8, 1.0), (1u8, -1.0)] {
        let th1 = psi + s1 * phi + FRAC_PI_2;
        let (sn1, cs1) = th1.sin_cos();
        let c5 = (p.x * sn1 - p.y * cs1 - d4) / d6;
        if c5.abs() > 1.0 + 1e-9 {
            continue;
        }
        let c5 = c5.clamp(-1.0, 1.0);
        for (b5, s5) in [(0u8, 1.0), (1u8, -1.0)] {
            let th5 = s5 * c5.acos();
            let sn5 = th5.sin();
            let th6 = if sn5.abs() < 1e-10 {
                wrist_hint
            } else {
                ((-m[(0, 1)] * sn1 + m[(1, 1)] * cs1) / sn5).atan2((m[(0, 0)] * sn1 - m[(1, 0)] * cs1) / sn5)
            };
            let t01 = raw_dh(&model.dh[0], th1);
            let t45 = raw_dh(&model.dh[4], th5);
            let t56 = raw_dh(&model.dh[5], th6);
            let t14 = t01.inverse() * flange * (t45 * t56).inverse();
            let p14 = t14.translation.vector;
            let planar = p14.x.hypot(p14.y);
            let c3 = (planar * planar - a2 * a2 - a3 * a3) / (2.0 * a2 * a3);
            if c3.abs() > 1.0 + 1e-9 {
                continue;
            }
            let c3 = c3.clamp(-1.0, 1.0);
            for (b3, s3) in [(0u8, 1.0), (1u8, -1.0)] {
                let th3 = s3 * c3.acos();
                let th2 = p14.y.atan2(p14.x) - (a3 * th3.sin()).atan2(a2 + a3 * th3.cos());
                let t13 = raw_dh(&model.dh[1], th2) * raw_dh(&model.dh[2], th3);
                let t34 = t13.inverse() * t14;
                let r34 = t34.rotation.to_rotation_matrix();
                let th4 = r34[(1, 0)].atan2(r34[(0, 0)]);
                out.push((b1 * 4 + b5 * 2 + b3, [th1, th2, th3, th4, th5, th6]));
            }
        }
    }
    out
}

/// DH transform on the raw angle, ignoring the configured offset.
fn raw_dh(row: &DhRow, theta: f64) -> Isometry3<f64> {
    DhRow {
        theta_offset: 0.0,
        ..*row
    }
    .transform(theta)
}

/// Picks the `2*pi` shift of `angle` that lies inside `limit`, preferring the
/// wrapped value or, when given, the one closest to `reference`.
fn choose_representative(angle: f64, limit: &JointLimit, reference: Option<f64>) -> Option<f64> {
    let base = crate::geometry::wrap_angle(angle);
    let candidates = [base, base - TAU, base + TAU, base - 2.0 * TAU, base + 2.0 * TAU];
    let mut inside = candidates.iter().copied().filter(|a| limit.contains(*a));
    match reference {
        None => inside.next(),
        Some(r) => inside.min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs())),
    }
}

/// Enumerates the analytic branches reaching `target` (world frame), drops
/// branches outside the joint limits and orders the rest.
pub fn inverse_kinematics(
    model: &ArmModel,
    target: &Pose,
    previous: Option<&Joints>,
) -> Result<IkSolutionSet, KinematicsError> {
    check_analytic_layout(model)?;
    let flange = model.base_pose.to_isometry().inverse() * target.to_isometry();
    let hint = previous.map(|p| p[5] + model.dh[5].theta_offset).unwrap_or(0.0);

    let mut solutions = Vec::with_capacity(8);
    for (branch, theta) in analytic_branches(model, &flange, hint) {
        let mut q = [0.0; 6];
        let mut ok = true;
        for i in 0..6 {
            let raw = theta[i] - model.dh[i].theta_offset;
            match choose_representative(raw, &model.joint_limits[i], previous.map(|p| p[i])) {
                Some(v) => q[i] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let reached = forward_kinematics(model, &q);
        if reached.approx_eq(target, BRANCH_POSITION_TOL, BRANCH_ANGLE_TOL) {
            solutions.push(IkSolution { q, branch });
        }
    }
    if solutions.is_empty() {
        return Err(KinematicsError::Unreachable);
    }
    match previous {
        Some(prev) => solutions.sort_by(|a, b| {
            joint_distance(&a.q, prev)
                .total_cmp(&joint_distance(&b.q, prev))
                .then(a.branch.cmp(&b.branch))
        }),
        None => solutions.sort_by_key(|s| s.branch),
    }
    Ok(IkSolutionSet {
        solutions,
        target: *target,
        selected_index: 0,
    })
}

/// Advances the selected branch by `direction` (wrapping).
pub fn cycle_solution(set: &IkSolutionSet, direction: i32) -> Result<IkSolutionSet, KinematicsError> {
    if set.solutions.is_empty() {
        return Err(KinematicsError::EmptySet);
    }
    let n = set.solutions.len() as i64;
    let next = (set.selected_index as i64 + direction as i64).rem_euclid(n) as usize;
    Ok(IkSolutionSet {
        selected_index: next,
        ..set.clone()
    })
}

/// Geometric Jacobian in the world frame; rows are `[v; omega]`.
pub fn jacobian(model: &ArmModel, q: &Joints) -> Matrix6<f64> {
    let frames = model.link_frames(q);
    let tip = frames[6].translation.vector;
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        let z = frames[i].rotation * Vector3::z();
        let o = frames[i].translation.vector;
        let v = z.cross(&(tip - o));
        for r in 0..3 {
            j[(r, i)] = v[r];
            j[(r + 3, i)] = z[r];
        }
    }
    j
}

/// `sqrt(det(J * J^T))`.
pub fn manipulability(model: &ArmModel, q: &Joints) -> f64 {
    let j = jacobian(model, q);
    (j * j.transpose()).determinant().max(0.0).sqrt()
}

pub fn is_singular(model: &ArmModel, q: &Joints) -> bool {
    manipulability(model, q) < model.singularity_threshold
}

/// Largest per-joint wrapped difference between two configurations.
pub fn max_wrapped_difference(a: &Joints, b: &Joints) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| angle_diff(*x, *y).abs())
        .fold(0.0, f64::max)
}

impl JointConfig {
    pub fn pose(&self, model: &ArmModel) -> Pose {
        forward_kinematics(model, &self.q)
    }
}
