use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    calibrate_world_frame, map_gripper, CaptureConfig, CaptureError, ControllerCommand, GripperState, HandSample, Mode,
    TickClock, WorldFrame,
};
use crate::dataset::{DemoEpisode, Embodiment, FrameRecord, GripperRecord, RobotRecord};
use crate::geometry::{JointConfig, Joints, Pose};
use crate::kinematics::{cycle_solution, forward_kinematics, inverse_kinematics, ArmModel, IkSolutionSet};
use crate::workspace::feasibility::speed_violation;
use crate::workspace::{check_static, check_step, FeasibilityVerdict, Scene, VerdictStatus};

/// The last configuration that passed every feasibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidState {
    pub config: JointConfig,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub mode: Mode,
    /// Mode to return to after realignment or base calibration.
    pub resume_mode: Option<Mode>,
    pub world_frame: Option<WorldFrame>,
    pub last_valid: Option<ValidState>,
    pub active_solution: Option<IkSolutionSet>,
    pub gripper: GripperState,
    pub base_pose: Pose,
    pub episode_buffer: Option<DemoEpisode>,
    pub last_verdict: Option<FeasibilityVerdict>,
    pub last_hand_time: Option<f64>,
}

impl SessionState {
    pub fn recording_active(&self) -> bool {
        self.mode == Mode::Recording
            || (self.mode == Mode::AwaitingRealignment && self.resume_mode == Some(Mode::Recording))
    }

    pub fn end_effector_red(&self) -> bool {
        self.mode == Mode::AwaitingRealignment || self.last_verdict.is_some_and(|v| !v.is_feasible())
    }
}

/// What the overlay should show after processing one hand sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayFeedback {
    pub mode: Mode,
    pub overlay_q: Option<Joints>,
    pub ee_pose: Option<Pose>,
    pub end_effector_red: bool,
    pub appended: bool,
    pub verdict: Option<FeasibilityVerdict>,
    pub gripper: GripperState,
}

/// Immutable view of a session for UIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub mode: Mode,
    pub overlay_q: Option<Joints>,
    pub ee_pose: Option<Pose>,
    pub gripper: GripperState,
    pub end_effector_red: bool,
    pub recording_active: bool,
    pub awaiting_realignment: bool,
    pub last_valid_pose: Option<Pose>,
    pub solution_index: Option<usize>,
    pub solution_count: usize,
    pub base_pose: Pose,
    pub recorded_samples: usize,
    pub verdict: Option<FeasibilityVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandOutcome {
    Applied,
    /// Recording stopped; the finalized episode.
    EpisodeFinalized(Box<DemoEpisode>),
}

/// Single-writer capture state machine for one operator.
#[derive(Debug, Clone)]
pub struct CaptureSession {
    model: ArmModel,
    scene: Arc<Scene>,
    config: CaptureConfig,
    state: SessionState,
    clock: TickClock,
    session_id: String,
    episodes_started: u64,
}

impl CaptureSession {
    pub fn new(model: ArmModel, scene: Arc<Scene>, config: CaptureConfig, session_id: impl Into<String>) -> Self {
        let state = SessionState {
            mode: Mode::Idle,
            resume_mode: None,
            world_frame: None,
            last_valid: None,
            active_solution: None,
            gripper: GripperState::Open,
            base_pose: model.base_pose,
            episode_buffer: None,
            last_verdict: None,
            last_hand_time: None,
        };
        Self {
            clock: TickClock::new(config.sample_rate),
            model,
            scene,
            config,
            state,
            session_id: session_id.into(),
            episodes_started: 0,
        }
    }

    /// A session whose tracking frame already is the world frame.
    pub fn calibrated(
        model: ArmModel,
        scene: Arc<Scene>,
        config: CaptureConfig,
        session_id: impl Into<String>,
    ) -> Self {
        let mut s = Self::new(model, scene, config, session_id);
        s.state.world_frame = Some(WorldFrame::identity());
        s
    }

    pub fn calibrate(
        &mut self,
        gravity: nalgebra::Vector3<f64>,
        forward: nalgebra::Vector3<f64>,
    ) -> Result<(), CaptureError> {
        self.state.world_frame = Some(calibrate_world_frame(gravity, forward)?);
        Ok(())
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn model(&self) -> &ArmModel {
        &self.model
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &CaptureConfig {
        &self.config
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    /// Tracking-space hand pose that would command `target`.
    pub fn hand_pose_for_target(&self, target: &Pose) -> Result<Pose, CaptureError> {
        let frame = self.state.world_frame.ok_or(CaptureError::NotCalibrated)?;
        Ok(frame.pose.compose(&target.compose(&self.config.hand_to_ee.inverse())))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let s = &self.state;
        SessionSnapshot {
            mode: s.mode,
            overlay_q: s.last_valid.map(|v| v.config.q),
            ee_pose: s.last_valid.map(|v| v.pose),
            gripper: s.gripper,
            end_effector_red: s.end_effector_red(),
            recording_active: s.recording_active(),
            awaiting_realignment: s.mode == Mode::AwaitingRealignment,
            last_valid_pose: s.last_valid.map(|v| v.pose),
            solution_index: s.active_solution.as_ref().map(|a| a.selected_index),
            solution_count: s.active_solution.as_ref().map_or(0, |a| a.len()),
            base_pose: s.base_pose,
            recorded_samples: s.episode_buffer.as_ref().map_or(0, |e| e.robot.len()),
            verdict: s.last_verdict,
        }
    }

    fn feedback(&self, appended: bool) -> OverlayFeedback {
        let s = &self.state;
        OverlayFeedback {
            mode: s.mode,
            overlay_q: s.last_valid.map(|v| v.config.q),
            ee_pose: s.last_valid.map(|v| v.pose),
            end_effector_red: s.end_effector_red(),
            appended,
            verdict: s.last_verdict,
            gripper: s.gripper,
        }
    }

    /// Processes one hand sample.
    pub fn step(&mut self, hand: &HandSample) -> Result<OverlayFeedback, CaptureError> {
        self.step_with_frames(hand, None, None)
    }

    /// Processes one hand sample; frame payloads are stored only when the
    /// sample is appended to the recording.
    pub fn step_with_frames(
        &mut self,
        hand: &HandSample,
        egocentric: Option<Vec<u8>>,
        external: Option<Vec<u8>>,
    ) -> Result<OverlayFeedback, CaptureError> {
        let frame = self.state.world_frame.ok_or(CaptureError::NotCalibrated)?;
        if let Some(prev) = self.state.last_hand_time {
            if !(hand.timestamp > prev) {
                return Err(CaptureError::NonMonotonicTimestamp {
                    previous: prev,
                    got: hand.timestamp,
                });
            }
        }
        if !(hand.pinch_distance >= 0.0) {
            return Err(CaptureError::NegativePinch(hand.pinch_distance));
        }
        self.state.last_hand_time = Some(hand.timestamp);
        if !hand.tracked {
            return Ok(self.feedback(false));
        }

        let world = frame.to_world(&hand.pose);
        let target = world.compose(&self.config.hand_to_ee);

        match self.state.mode {
            Mode::BaseCalibration => return Ok(self.feedback(false)),
            Mode::AwaitingRealignment => {
                let lv = self
                    .state
                    .last_valid
                    .expect("awaiting realignment without a valid pose");
                let aligned = target.position_error(&lv.pose) <= self.config.realign_position_tol
                    && target.angular_error(&lv.pose) <= self.config.realign_angle_tol;
                if !aligned {
                    return Ok(self.feedback(false));
                }
                self.state.mode = self.state.resume_mode.take().unwrap_or(Mode::Tracking);
                self.state.last_verdict = None;
            }
            Mode::Idle | Mode::Tracking | Mode::Recording => {}
        }
        let world_hand = HandSample { pose: world, ..*hand };
        let appended = self.track(&world_hand, &target, egocentric, external);
        Ok(self.feedback(appended))
    }

    fn track(
        &mut self,
        hand: &HandSample,
        target: &Pose,
        egocentric: Option<Vec<u8>>,
        external: Option<Vec<u8>>,
    ) -> bool {
        let previous = self.state.last_valid;
        let seed = previous.map_or(self.model.home, |v| v.config.q);
        let (candidate, verdict) = match inverse_kinematics(&self.model, target, Some(&seed)) {
            Err(_) => (None, FeasibilityVerdict::unreachable()),
            Ok(set) => {
                let q = set.solutions[0].q;
                let verdict = match previous {
                    Some(lv) => check_step(
                        &self.model,
                        &lv.config.q,
                        &q,
                        hand.timestamp - lv.config.timestamp,
                        &self.scene,
                    ),
                    None => check_static(&self.model, &q, &self.scene),
                };
                (Some((q, set)), verdict)
            }
        };
        self.state.last_verdict = Some(verdict);

        let Some((q, set)) = candidate.filter(|_| verdict.is_feasible()) else {
            // Nothing valid yet: stay put and keep trying.
            if previous.is_some() {
                self.state.resume_mode = Some(self.state.mode);
                self.state.mode = Mode::AwaitingRealignment;
            }
            return false;
        };

        let pose = forward_kinematics(&self.model, &q);
        self.state.last_valid = Some(ValidState {
            config: JointConfig::new(q, hand.timestamp),
            pose,
        });
        self.state.active_solution = Some(set);
        self.state.gripper = map_gripper(hand.pinch_distance, self.state.gripper, &self.config.gripper);
        if self.state.mode == Mode::Idle {
            self.state.mode = Mode::Tracking;
        }

        if self.state.mode != Mode::Recording || !self.clock.is_due(hand.timestamp) {
            return false;
        }
        let ep = self.state.episode_buffer.as_mut().expect("recording without a buffer");
        // Each recorded step must respect the speed limits on its own, not
        // only as the sum of the tracked steps in between.
        if let Some(last) = ep.robot.last() {
            if speed_violation(&self.model, &last.q, &q, hand.timestamp - last.timestamp).is_some() {
                return false;
            }
        }
        self.clock.poll(hand.timestamp);
        let gripper = self.state.gripper;
        ep.hand.push(*hand);
        ep.robot.push(RobotRecord {
            timestamp: hand.timestamp,
            q,
            ee: pose.canonical(),
            verdict: VerdictStatus::Feasible,
            embodiment: Embodiment::RobotOverlay,
        });
        ep.gripper.push(GripperRecord {
            timestamp: hand.timestamp,
            state: gripper,
        });
        if egocentric.is_some() || external.is_some() {
            let egocentric = egocentric.map(|b| ep.add_blob(b));
            let external = external.map(|b| ep.add_blob(b));
            ep.frames.push(FrameRecord {
                timestamp: hand.timestamp,
                egocentric,
                external,
                mask: None,
            });
        }
        true
    }

    fn illegal(&self, cmd: &ControllerCommand) -> CaptureError {
        CaptureError::IllegalTransition {
            mode: self.state.mode,
            command: cmd.name(),
        }
    }

    pub fn handle_command(&mut self, cmd: ControllerCommand) -> Result<CommandOutcome, CaptureError> {
        let mode = self.state.mode;
        match cmd {
            ControllerCommand::StartRecording => {
                if !matches!(mode, Mode::Idle | Mode::Tracking) {
                    return Err(self.illegal(&cmd));
                }
                self.episodes_started += 1;
                let id = format!("{}-{:04}", self.session_id, self.episodes_started);
                self.state.episode_buffer = Some(DemoEpisode::new(
                    id,
                    self.scene.id.clone(),
                    self.state.base_pose.canonical(),
                    self.config.sample_rate,
                ));
                self.clock.reset();
                self.state.mode = Mode::Recording;
                Ok(CommandOutcome::Applied)
            }
            ControllerCommand::StopRecording => {
                let after = if self.state.last_valid.is_some() {
                    Mode::Tracking
                } else {
                    Mode::Idle
                };
                match mode {
                    Mode::Recording => self.state.mode = after,
                    Mode::AwaitingRealignment if self.state.resume_mode == Some(Mode::Recording) => {
                        self.state.resume_mode = Some(Mode::Tracking);
                    }
                    _ => return Err(self.illegal(&cmd)),
                }
                let ep = self.state.episode_buffer.take().expect("recording without a buffer");
                Ok(CommandOutcome::EpisodeFinalized(Box::new(ep)))
            }
            ControllerCommand::CycleSolution { direction } => {
                if !matches!(mode, Mode::Tracking | Mode::Recording) {
                    return Err(self.illegal(&cmd));
                }
                let (Some(set), Some(lv)) = (self.state.active_solution.as_ref(), self.state.last_valid) else {
                    return Err(self.illegal(&cmd));
                };
                let next = cycle_solution(set, direction.signum().max(-1)).map_err(|_| self.illegal(&cmd))?;
                let q = next.selected().expect("non-empty set").q;
                let mut verdict = check_static(&self.model, &q, &self.scene);
                // While recording, the switch must fit the speed limits over the
                // time since the last accepted configuration, or the recorded
                // stream would jump.
                let now = self
                    .state
                    .last_hand_time
                    .unwrap_or(lv.config.timestamp)
                    .max(lv.config.timestamp);
                if verdict.is_feasible() && mode == Mode::Recording {
                    let dt = now - lv.config.timestamp;
                    if let Some(j) = speed_violation(&self.model, &lv.config.q, &q, dt) {
                        verdict = FeasibilityVerdict {
                            offending_joint: Some(j),
                            ..FeasibilityVerdict::failure(VerdictStatus::SpeedLimit)
                        };
                    }
                }
                if !verdict.is_feasible() {
                    return Err(CaptureError::InfeasibleBranch(verdict));
                }
                self.state.last_valid = Some(ValidState {
                    config: JointConfig::new(
                        q,
                        if mode == Mode::Recording {
                            now
                        } else {
                            lv.config.timestamp
                        },
                    ),
                    pose: forward_kinematics(&self.model, &q),
                });
                self.state.active_solution = Some(next);
                self.state.last_verdict = Some(verdict);
                Ok(CommandOutcome::Applied)
            }
            ControllerCommand::BeginBaseCalibration => {
                if !matches!(mode, Mode::Idle | Mode::Tracking) {
                    return Err(self.illegal(&cmd));
                }
                self.state.resume_mode = Some(mode);
                self.state.mode = Mode::BaseCalibration;
                Ok(CommandOutcome::Applied)
            }
            ControllerCommand::EndBaseCalibration => {
                if mode != Mode::BaseCalibration {
                    return Err(self.illegal(&cmd));
                }
                self.state.resume_mode = None;
                self.state.mode = if self.state.last_valid.is_some() {
                    Mode::Tracking
                } else {
                    Mode::Idle
                };
                Ok(CommandOutcome::Applied)
            }
            ControllerCommand::BaseJog { translation } => {
                if mode != Mode::BaseCalibration {
                    return Err(self.illegal(&cmd));
                }
                self.state.base_pose.position += nalgebra::Vector3::from(translation);
                self.model.base_pose = self.state.base_pose;
                if let Some(lv) = self.state.last_valid.as_mut() {
                    lv.pose = forward_kinematics(&self.model, &lv.config.q);
                }
                self.state.active_solution = None;
                Ok(CommandOutcome::Applied)
            }
        }
    }
}
