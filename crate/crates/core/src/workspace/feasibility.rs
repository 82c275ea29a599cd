use std::fmt;

use serde::{Deserialize, Serialize};

use super::collision::{min_distance, self_proximity};
use super::scene::{Scene, Thresholds};
use crate::geometry::Joints;
use crate::kinematics::{manipulability, ArmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictStatus {
    Feasible,
    EnvCollision,
    SelfCollision,
    SpeedLimit,
    Singular,
    Unreachable,
}

impl VerdictStatus {
    pub const ALL: [VerdictStatus; 6] = [
        VerdictStatus::Feasible,
        VerdictStatus::EnvCollision,
        VerdictStatus::SelfCollision,
        VerdictStatus::SpeedLimit,
        VerdictStatus::Singular,
        VerdictStatus::Unreachable,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_feasible(self) -> bool {
        self == VerdictStatus::Feasible
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VerdictStatus::Feasible => "feasible",
            VerdictStatus::EnvCollision => "env_collision",
            VerdictStatus::SelfCollision => "self_collision",
            VerdictStatus::SpeedLimit => "speed_limit",
            VerdictStatus::Singular => "singular",
            VerdictStatus::Unreachable => "unreachable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub status: VerdictStatus,
    /// Robot-to-environment clearance in meters (`+inf` with no environment);
    /// self-collision verdicts carry the closest link-pair distance instead.
    pub min_clearance: Option<f64>,
    pub offending_link: Option<usize>,
    pub offending_joint: Option<usize>,
}

impl FeasibilityVerdict {
    pub fn feasible(min_clearance: f64) -> Self {
        Self {
            status: VerdictStatus::Feasible,
            min_clearance: Some(min_clearance),
            offending_link: None,
            offending_joint: None,
        }
    }

    pub fn failure(status: VerdictStatus) -> Self {
        Self {
            status,
            min_clearance: None,
            offending_link: None,
            offending_joint: None,
        }
    }

    pub fn unreachable() -> Self {
        Self::failure(VerdictStatus::Unreachable)
    }

    pub fn is_feasible(&self) -> bool {
        self.status.is_feasible()
    }
}

/// Self-collision check over non-adjacent link pairs.
pub fn self_collision(model: &ArmModel, q: &Joints, self_clearance: f64) -> FeasibilityVerdict {
    let prox = self_proximity(model, q);
    if prox.distance < self_clearance {
        FeasibilityVerdict {
            status: VerdictStatus::SelfCollision,
            min_clearance: Some(prox.distance),
            offending_link: prox.links.map(|(a, _)| a),
            offending_joint: None,
        }
    } else {
        FeasibilityVerdict::feasible(prox.distance)
    }
}

/// Joint-limit, speed, singularity, self-collision and clearance checks for
/// the transition `prev -> next` over `dt` seconds. The first failing check
/// in that order decides the verdict.
pub fn check_step(model: &ArmModel, prev: &Joints, next: &Joints, dt: f64, scene: &Scene) -> FeasibilityVerdict {
    if let Some(j) = model.first_limit_violation(next) {
        return FeasibilityVerdict {
            offending_joint: Some(j),
            ..FeasibilityVerdict::unreachable()
        };
    }
    if let Some(j) = speed_violation(model, prev, next, dt) {
        return FeasibilityVerdict {
            offending_joint: Some(j),
            ..FeasibilityVerdict::failure(VerdictStatus::SpeedLimit)
        };
    }
    check_configuration(model, next, scene, false)
}

/// [`check_step`] without the speed check, for a configuration on its own.
pub fn check_static(model: &ArmModel, q: &Joints, scene: &Scene) -> FeasibilityVerdict {
    check_configuration(model, q, scene, true)
}

fn check_configuration(model: &ArmModel, q: &Joints, scene: &Scene, limits: bool) -> FeasibilityVerdict {
    if limits {
        if let Some(j) = model.first_limit_violation(q) {
            return FeasibilityVerdict {
                offending_joint: Some(j),
                ..FeasibilityVerdict::unreachable()
            };
        }
    }
    if manipulability(model, q) < model.singularity_threshold {
        return FeasibilityVerdict::failure(VerdictStatus::Singular);
    }
    let Thresholds {
        environment,
        self_clearance,
    } = scene.thresholds;
    let selfv = self_collision(model, q, self_clearance);
    if !selfv.is_feasible() {
        return selfv;
    }
    let clearance = min_distance(model, q, &scene.cloud);
    if clearance.distance < environment {
        return FeasibilityVerdict {
            status: VerdictStatus::EnvCollision,
            min_clearance: Some(clearance.distance),
            offending_link: clearance.link,
            offending_joint: None,
        };
    }
    FeasibilityVerdict::feasible(clearance.distance)
}

/// First joint whose `|next - prev| / dt` exceeds its speed limit.
pub fn speed_violation(model: &ArmModel, prev: &Joints, next: &Joints, dt: f64) -> Option<usize> {
    (0..6).find(|&i| {
        let delta = (next[i] - prev[i]).abs();
        if dt > 0.0 {
            delta / dt > model.speed_limits[i]
        } else {
            delta > 0.0
        }
    })
}
