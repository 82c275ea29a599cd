//! Simulated AR robot-overlay demonstration pipeline: kinematics,
//! feasibility gating, live capture, datasets, chunked execution,
//! offline validation and scripted hand input.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod dataset;
pub mod executor;
pub mod geometry;
pub mod kinematics;
pub mod scripted;
pub mod validator;
pub mod workspace;

pub use geometry::{JointConfig, Joints, Pose};
pub use kinematics::{ArmModel, IkSolutionSet, KinematicsError};
