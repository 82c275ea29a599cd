//! Headless hand input: waypoint trajectories, a capture runner that reacts
//! to freezes, and the tabletop task recipes.

mod recipes;

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{
    CaptureError, CaptureSession, CommandOutcome, ControllerCommand, HandSample, Mode, OverlayFeedback,
};
use crate::dataset::DemoEpisode;
use crate::geometry::Pose;

pub use recipes::{
    gripper_down, pickplace, pickplace_with_obstacle, stack, tabletop_cloud, task_recipes, RecipeParams, TaskBundle,
};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("trajectory needs at least two waypoints")]
    TooFewWaypoints,
    #[error("waypoint times must be strictly increasing (index {0})")]
    NonIncreasingTime(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory: {0}")]
    Format(String),
    #[error(transparent)]
    Capture(#[from] CaptureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub pose: Pose,
    /// Thumb-index distance in meters.
    pub pinch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub time: f64,
    pub command: ControllerCommand,
}

/// Waypoints in tracking coordinates, interpolated linearly in position and
/// pinch and by slerp in orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrajectory {
    pub waypoints: Vec<Waypoint>,
    /// Per-axis Gaussian position noise, meters.
    #[serde(default)]
    pub noise: Option<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
    /// Commands issued before the first hand sample at or after their time.
    #[serde(default)]
    pub commands: Vec<TimedCommand>,
}

impl ScriptedTrajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Self {
        Self {
            waypoints,
            noise: None,
            seed: 0,
            commands: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.waypoints.len() < 2 {
            return Err(ScriptError::TooFewWaypoints);
        }
        match self.waypoints.windows(2).position(|w| w[1].time <= w[0].time) {
            Some(i) => Err(ScriptError::NonIncreasingTime(i + 1)),
            None => Ok(()),
        }
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time
    }

    /// Noise-free pose and pinch at `t`, held constant outside the waypoint span.
    pub fn at(&self, t: f64) -> (Pose, f64) {
        interpolate(&self.waypoints, t)
    }

    /// Deterministic hand stream at `rate` from the first to the last waypoint.
    pub fn generate(&self, rate: f64) -> Result<Vec<HandSample>, ScriptError> {
        self.validate()?;
        let mut noise = NoiseSource::new(self.noise, self.seed);
        Ok(sample_times(self.start_time(), self.end_time(), rate)
            .map(|t| {
                let (pose, pinch) = self.at(t);
                HandSample::new(t, noise.perturb(pose), pinch)
            })
            .collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)?;
        let t: Self = toml::from_str(&text).map_err(|e| ScriptError::Format(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScriptError> {
        let text = toml::to_string_pretty(self).map_err(|e| ScriptError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn sample_times(start: f64, end: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = ((end - start) * rate + 1e-9).floor() as usize + 1;
    (0..n).map(move |k| start + k as f64 / rate)
}

fn interpolate(waypoints: &[Waypoint], t: f64) -> (Pose, f64) {
    let j = waypoints.partition_point(|w| w.time <= t);
    if j == 0 {
        return (waypoints[0].pose, waypoints[0].pinch);
    }
    if j == waypoints.len() {
        let w = &waypoints[j - 1];
        return (w.pose, w.pinch);
    }
    let (a, b) = (&waypoints[j - 1], &waypoints[j]);
    let s = (t - a.time) / (b.time - a.time);
    (a.pose.interpolate(&b.pose, s), a.pinch + (b.pinch - a.pinch) * s)
}

struct NoiseSource {
    rng: ChaCha8Rng,
    axes: Option<[Normal<f64>; 3]>,
}

impl NoiseSource {
    fn new(sigma: Option<[f64; 3]>, seed: u64) -> Self {
        let axes = sigma.map(|s| s.map(|v| Normal::new(0.0, v.abs()).expect("finite sigma")));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            axes,
        }
    }

    fn perturb(&mut self, pose: Pose) -> Pose {
        match &self.axes {
            Some(axes) => {
                let d = Vector3::new(
                    axes[0].sample(&mut self.rng),
                    axes[1].sample(&mut self.rng),
                    axes[2].sample(&mut self.rng),
                );
                Pose::new(pose.position + d, pose.orientation)
            }
            None => pose,
        }
    }
}

/// How the runner recovers from a freeze: return to the frozen pose, climb to
/// `height` (world y), cross to the end of the interrupted segment and
/// descend onto it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detour {
    pub height: f64,
    /// Hand speed along the detour, m/s.
    pub speed: f64,
    pub max_detours: usize,
}

impl Default for Detour {
    fn default() -> Self {
        Self {
            height: 0.32,
            speed: 0.15,
            max_detours: 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CaptureRun {
    pub episodes: Vec<DemoEpisode>,
    pub feedback: Vec<OverlayFeedback>,
    /// Number of times tracking froze.
    pub freezes: usize,
    pub detours: usize,
    /// Commands the session refused, with the sample time and reason.
    pub rejected_commands: Vec<(f64, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub hand_rate: f64,
    /// Issue StartRecording before the first sample and StopRecording after the last.
    pub record: bool,
    pub detour: Option<Detour>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            hand_rate: 30.0,
            record: true,
            detour: None,
        }
    }
}

fn apply_command(session: &mut CaptureSession, t: f64, cmd: ControllerCommand, run: &mut CaptureRun) {
    match session.handle_command(cmd) {
        Ok(CommandOutcome::EpisodeFinalized(ep)) => run.episodes.push(*ep),
        Ok(CommandOutcome::Applied) => {}
        Err(e) => run.rejected_commands.push((t, e.to_string())),
    }
}

/// Streams the trajectory into `session`, applying timed commands and, when a
/// detour is configured, steering the hand around whatever caused a freeze.
pub fn run_capture(
    session: &mut CaptureSession,
    trajectory: &ScriptedTrajectory,
    options: RunOptions,
) -> Result<CaptureRun, ScriptError> {
    trajectory.validate()?;
    let mut plan = trajectory.waypoints.clone();
    let mut commands = trajectory.commands.clone();
    commands.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut pending = commands.into_iter().peekable();
    let mut noise = NoiseSource::new(trajectory.noise, trajectory.seed);
    let mut run = CaptureRun::default();
    let dt = 1.0 / options.hand_rate;
    let start = plan[0].time;
    let mut k = 0usize;
    let mut prev_mode = session.mode();

    if options.record {
        apply_command(session, start, ControllerCommand::StartRecording, &mut run);
    }
    loop {
        let t = start + k as f64 * dt;
        if t > plan[plan.len() - 1].time + 1e-9 {
            break;
        }
        k += 1;
        while let Some(c) = pending.next_if(|c| c.time <= t + 1e-9) {
            apply_command(session, t, c.command, &mut run);
        }
        let (pose, pinch) = interpolate(&plan, t);
        let fb = session.step(&HandSample::new(t, noise.perturb(pose), pinch))?;
        let froze = fb.mode == Mode::AwaitingRealignment && prev_mode != Mode::AwaitingRealignment;
        prev_mode = fb.mode;
        run.feedback.push(fb);
        if !froze {
            continue;
        }
        run.freezes += 1;
        let Some(detour) = options.detour else { continue };
        if run.detours >= detour.max_detours {
            continue;
        }
        let Some(frozen) = session.state().last_valid.map(|v| v.pose) else {
            continue;
        };
        run.detours += 1;
        plan = detour_plan(session, &plan, t, pose, pinch, &frozen, &detour)?;
    }
    for c in pending {
        apply_command(session, plan[plan.len() - 1].time, c.command, &mut run);
    }
    if options.record && session.state().recording_active() {
        apply_command(
            session,
            plan[plan.len() - 1].time,
            ControllerCommand::StopRecording,
            &mut run,
        );
    }
    Ok(run)
}

fn detour_plan(
    session: &CaptureSession,
    plan: &[Waypoint],
    t: f64,
    current: Pose,
    pinch: f64,
    frozen: &Pose,
    detour: &Detour,
) -> Result<Vec<Waypoint>, ScriptError> {
    let j = plan.partition_point(|w| w.time <= t).min(plan.len() - 1);
    let rejoin = plan[j];
    let hand = |target: &Pose| session.hand_pose_for_target(target);
    let frozen_hand = hand(frozen)?;
    let mut above = *frozen;
    above.position.y = above.position.y.max(detour.height);
    let rejoin_world = session
        .state()
        .world_frame
        .map(|f| f.to_world(&rejoin.pose))
        .ok_or(CaptureError::NotCalibrated)?;
    let mut over = rejoin_world;
    over.position.y = over.position.y.max(detour.height);
    over.orientation = frozen.orientation;

    let mut out = vec![Waypoint {
        time: t,
        pose: current,
        pinch,
    }];
    let mut push = |pose: Pose, settle: f64| {
        let last = out[out.len() - 1];
        let d = last.pose.position_error(&pose);
        out.push(Waypoint {
            time: last.time + d / detour.speed + settle,
            pose,
            pinch,
        });
    };
    push(frozen_hand, 0.3);
    push(hand(&above)?, 0.1);
    push(hand(&over)?, 0.1);
    push(rejoin.pose, 0.1);
    let shift = out[out.len() - 1].time - rejoin.time;
    out.extend(plan[j + 1..].iter().map(|w| Waypoint {
        time: w.time + shift,
        ..*w
    }));
    Ok(out)
}
