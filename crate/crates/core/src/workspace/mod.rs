//! Environment representation and the per-step feasibility engine.

pub mod cloud;
pub mod collision;
pub mod feasibility;
pub mod scene;

use thiserror::Error;

pub use cloud::EnvironmentCloud;
pub use collision::{
    capsule_distance, min_distance, min_distance_brute_force, placed_capsules, Clearance, PlacedCapsule,
};
pub use feasibility::{check_static, check_step, self_collision, FeasibilityVerdict, VerdictStatus};
pub use scene::{Aabb, Scene, Thresholds};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene data: {0}")]
    Format(String),
    #[error("scene format_version {found} is not supported (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
}
