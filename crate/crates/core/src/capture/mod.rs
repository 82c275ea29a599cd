//! Live demonstration capture: hand intake, gripper mapping, world-frame
//! calibration, the 10 Hz sampling clock and the recording state machine.

mod session;

use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::workspace::FeasibilityVerdict;

pub use session::{CaptureSession, CommandOutcome, OverlayFeedback, SessionSnapshot, SessionState, ValidState};

/// Default recording rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 10.0;

/// Timestamp slack when deciding whether a clock tick is due.
pub const TICK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("world frame has not been calibrated")]
    NotCalibrated,
    #[error("gravity and forward directions are degenerate")]
    DegenerateAxes,
    #[error("command {command} is not allowed in mode {mode}")]
    IllegalTransition { mode: Mode, command: &'static str },
    #[error("next IK branch is infeasible ({})", .0.status)]
    InfeasibleBranch(FeasibilityVerdict),
    #[error("hand timestamp {got} does not follow {previous}")]
    NonMonotonicTimestamp { previous: f64, got: f64 },
    #[error("pinch distance must be non-negative, got {0}")]
    NegativePinch(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    Tracking,
    Recording,
    AwaitingRealignment,
    BaseCalibration,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum GripperState {
    #[default]
    Open,
    Closed,
}

impl GripperState {
    pub fn as_f64(self) -> f64 {
        match self {
            GripperState::Open => 0.0,
            GripperState::Closed => 1.0,
        }
    }

    /// Inverse of [`GripperState::as_f64`], thresholded at one half.
    pub fn from_f64(v: f64) -> Self {
        if v >= 0.5 {
            GripperState::Closed
        } else {
            GripperState::Open
        }
    }
}

/// One tracked right-hand sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandSample {
    pub timestamp: f64,
    pub pose: Pose,
    /// Thumb tip to index fingertip, meters.
    pub pinch_distance: f64,
    pub tracked: bool,
}

impl HandSample {
    pub fn new(timestamp: f64, pose: Pose, pinch_distance: f64) -> Self {
        Self {
            timestamp,
            pose,
            pinch_distance,
            tracked: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperThresholds {
    /// Close when the pinch distance drops below this.
    pub close_below: f64,
    /// Open when the pinch distance rises above this.
    pub open_above: f64,
}

impl Default for GripperThresholds {
    fn default() -> Self {
        Self {
            close_below: 0.02,
            open_above: 0.04,
        }
    }
}

/// Hysteresis mapping from pinch distance to a binary gripper command.
pub fn map_gripper(pinch_distance: f64, previous: GripperState, thresholds: &GripperThresholds) -> GripperState {
    if pinch_distance < thresholds.close_below {
        GripperState::Closed
    } else if pinch_distance > thresholds.open_above {
        GripperState::Open
    } else {
        previous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

/// Gravity-aligned world frame expressed in tracking coordinates.
///
/// Axes: y is up (against gravity), z is the horizontal projection of the
/// headset's forward direction, x completes a right-handed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldFrame {
    /// Pose of the world frame in tracking coordinates.
    pub pose: Pose,
}

impl WorldFrame {
    pub fn identity() -> Self {
        Self { pose: Pose::identity() }
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.pose.orientation * Vector3::x()
    }

    pub fn up(&self) -> Vector3<f64> {
        self.pose.orientation * Vector3::y()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.pose.orientation * Vector3::z()
    }

    /// Re-expresses a tracking-frame pose in world coordinates.
    pub fn to_world(&self, tracking: &Pose) -> Pose {
        self.pose.inverse().compose(tracking)
    }
}

/// Builds the world frame from a gravity vector and the headset forward
/// direction, both in tracking coordinates.
pub fn calibrate_world_frame(gravity: Vector3<f64>, headset_forward: Vector3<f64>) -> Result<WorldFrame, CaptureError> {
    let g = gravity.try_normalize(1e-12).ok_or(CaptureError::DegenerateAxes)?;
    let f = headset_forward
        .try_normalize(1e-12)
        .ok_or(CaptureError::DegenerateAxes)?;
    if g.cross(&f).norm() < 1e-6 {
        return Err(CaptureError::DegenerateAxes);
    }
    let up = -g;
    let z = (f - up * f.dot(&up)).normalize();
    let x = up.cross(&z);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, up, z]));
    Ok(WorldFrame {
        pose: Pose::new(Vector3::zeros(), UnitQuaternion::from_rotation_matrix(&rot)),
    })
}

/// Tick times in `[0, duration)` at `rate` Hz.
pub fn sample_clock(rate: f64, duration: f64) -> Vec<f64> {
    assert!(rate > 0.0, "sample rate must be positive");
    let count = (duration * rate - TICK_TOLERANCE).ceil().max(0.0) as u64;
    (0..count).map(|k| k as f64 / rate).collect()
}

/// Streaming form of [`sample_clock`]: reports whether a session timestamp
/// reaches the next tick of a grid anchored at the first observed time.
#[derive(Debug, Clone, PartialEq)]
pub struct TickClock {
    rate: f64,
    origin: Option<f64>,
    next_index: u64,
}

impl TickClock {
    pub fn new(rate: f64) -> Self {
        assert!(rate > 0.0, "sample rate must be positive");
        Self {
            rate,
            origin: None,
            next_index: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reset(&mut self) {
        self.origin = None;
        self.next_index = 0;
    }

    pub fn next_tick_time(&self) -> Option<f64> {
        self.origin.map(|o| o + self.next_index as f64 / self.rate)
    }

    /// Whether `t` reaches the next tick, without consuming it.
    pub fn is_due(&self, t: f64) -> bool {
        self.next_tick_time().is_none_or(|due| t + TICK_TOLERANCE >= due)
    }

    /// True when `t` is at or past the next tick; consumes every tick up to `t`.
    pub fn poll(&mut self, t: f64) -> bool {
        let origin = *self.origin.get_or_insert(t);
        let due = origin + self.next_index as f64 / self.rate;
        if t + TICK_TOLERANCE < due {
            return false;
        }
        let elapsed = ((t - origin) * self.rate + TICK_TOLERANCE).floor().max(0.0) as u64;
        self.next_index = elapsed + 1;
        true
    }
}

/// Capture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub sample_rate: f64,
    pub realign_position_tol: f64,
    pub realign_angle_tol: f64,
    pub gripper: GripperThresholds,
    /// Base translation speed at full joystick deflection, m/s.
    pub jog_speed: f64,
    /// Fixed offset from the tracked hand to the end effector.
    pub hand_to_ee: Pose,
    pub handedness: Handedness,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            realign_position_tol: 0.02,
            realign_angle_tol: 5f64.to_radians(),
            gripper: GripperThresholds::default(),
            jog_speed: 0.2,
            hand_to_ee: Pose::identity(),
            handedness: Handedness::Right,
        }
    }
}

/// Controller inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ControllerCommand {
    StartRecording,
    StopRecording,
    /// `direction` is +1 or -1.
    CycleSolution {
        #[serde(default = "forward")]
        direction: i32,
    },
    BeginBaseCalibration,
    EndBaseCalibration,
    /// World-frame base translation in meters.
    BaseJog {
        translation: [f64; 3],
    },
}

fn forward() -> i32 {
    1
}

impl ControllerCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerCommand::StartRecording => "StartRecording",
            ControllerCommand::StopRecording => "StopRecording",
            ControllerCommand::CycleSolution { .. } => "CycleSolution",
            ControllerCommand::BeginBaseCalibration => "BeginBaseCalibration",
            ControllerCommand::EndBaseCalibration => "EndBaseCalibration",
            ControllerCommand::BaseJog { .. } => "BaseJog",
        }
    }

    /// Joystick jog: `stick = [right, forward]` deflections in `[-1, 1]` held
    /// for `dt` seconds at `speed` m/s, plus a direct height change in meters.
    /// Horizontal motion follows the calibrated world axes (x is to the
    /// operator's left, z is forward, y is up).
    pub fn base_jog_from_stick(stick: [f64; 2], height: f64, dt: f64, speed: f64) -> Self {
        let right = stick[0].clamp(-1.0, 1.0) * speed * dt;
        let fwd = stick[1].clamp(-1.0, 1.0) * speed * dt;
        ControllerCommand::BaseJog {
            translation: [-right, height, fwd],
        }
    }
}
