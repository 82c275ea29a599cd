use nalgebra::Vector3;

use super::cloud::EnvironmentCloud;
use crate::geometry::{point_segment_distance, segment_segment_distance, Joints};
use crate::kinematics::ArmModel;

/// A link capsule placed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedCapsule {
    pub link: usize,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl PlacedCapsule {
    /// Signed distance from `p` to the capsule surface (negative inside).
    pub fn point_distance(&self, p: &Vector3<f64>) -> f64 {
        point_segment_distance(p, &self.a, &self.b) - self.radius
    }

    fn key(&self) -> [f64; 7] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z, self.radius]
    }
}

/// Surface-to-surface distance between two capsules (negative when they overlap).
///
/// Arguments are put in a canonical order first so the result does not depend
/// on which capsule is passed first.
pub fn capsule_distance(c1: &PlacedCapsule, c2: &PlacedCapsule) -> f64 {
    let (x, y) = match c1.key().partial_cmp(&c2.key()) {
        Some(std::cmp::Ordering::Greater) => (c2, c1),
        _ => (c1, c2),
    };
    segment_segment_distance(&x.a, &x.b, &y.a, &y.b) - x.radius - y.radius
}

/// All link capsules of `model` posed at `q`, in link order.
pub fn placed_capsules(model: &ArmModel, q: &Joints) -> Vec<PlacedCapsule> {
    let frames = model.link_frames(q);
    let mut out = Vec::new();
    for (link, caps) in model.links.iter().enumerate() {
        for c in caps {
            let (a, b) = c.endpoints_in(&frames[link]);
            out.push(PlacedCapsule {
                link,
                a,
                b,
                radius: c.radius,
            });
        }
    }
    out
}

/// Minimum robot-to-environment clearance and the link attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clearance {
    /// Meters past the capsule surface; negative means penetration.
    /// `+inf` for an empty environment.
    pub distance: f64,
    pub link: Option<usize>,
}

impl Clearance {
    pub const UNBOUNDED: Clearance = Clearance {
        distance: f64::INFINITY,
        link: None,
    };
}

/// Robot-vs-environment clearance using the cloud's voxel index when present.
pub fn min_distance(model: &ArmModel, q: &Joints, env: &EnvironmentCloud) -> Clearance {
    min_distance_over(&placed_capsules(model, q), env)
}

pub fn min_distance_over(capsules: &[PlacedCapsule], env: &EnvironmentCloud) -> Clearance {
    let mut best = Clearance::UNBOUNDED;
    for c in capsules {
        if let Some(d) = env.nearest_to_segment(&c.a, &c.b) {
            let d = d - c.radius;
            if d < best.distance {
                best = Clearance {
                    distance: d,
                    link: Some(c.link),
                };
            }
        }
    }
    best
}

/// Reference implementation: every (capsule, point) pair, no index.
pub fn min_distance_brute_force(model: &ArmModel, q: &Joints, env: &EnvironmentCloud) -> Clearance {
    let mut best = Clearance::UNBOUNDED;
    for c in placed_capsules(model, q) {
        for p in env.points() {
            let d = c.point_distance(p);
            if d < best.distance {
                best = Clearance {
                    distance: d,
                    link: Some(c.link),
                };
            }
        }
    }
    best
}

/// Closest pair of non-adjacent link capsules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfProximity {
    pub distance: f64,
    pub links: Option<(usize, usize)>,
}

/// Links `i` and `j` are checked against each other only when `|i - j| > 1`.
pub fn links_checked(i: usize, j: usize) -> bool {
    i.abs_diff(j) > 1
}

pub fn self_proximity(model: &ArmModel, q: &Joints) -> SelfProximity {
    let caps = placed_capsules(model, q);
    let mut best = SelfProximity {
        distance: f64::INFINITY,
        links: None,
    };
    for (i, c1) in caps.iter().enumerate() {
        for c2 in &caps[i + 1..] {
            if !links_checked(c1.link, c2.link) {
                continue;
            }
            let d = capsule_distance(c1, c2);
            if d < best.distance {
                best = SelfProximity {
                    distance: d,
                    links: Some((c1.link.min(c2.link), c1.link.max(c2.link))),
                };
            }
        }
    }
    best
}
