use super::ExecutorError;
use crate::capture::GripperState;
use crate::dataset::{episode_actions, ActionChunk, ActionSpace, DemoEpisode};

/// What a policy sees when queried.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub tick: u64,
    pub time: f64,
    /// Latest robot state from the state source, in the policy's action space.
    pub state: Option<Vec<f64>>,
}

/// Synchronous chunk predictor.
pub trait Policy {
    fn space(&self) -> ActionSpace;
    fn predict(&mut self, input: &PolicyInput, horizon: usize) -> Result<ActionChunk, ExecutorError>;
}

/// Always predicts the same action.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub space: ActionSpace,
    pub action: Vec<f64>,
}

impl Policy for ConstantPolicy {
    fn space(&self) -> ActionSpace {
        self.space
    }

    fn predict(&mut self, input: &PolicyInput, horizon: usize) -> Result<ActionChunk, ExecutorError> {
        Ok(ActionChunk {
            space: self.space,
            start_timestamp: input.time,
            actions: vec![self.action.clone(); horizon],
            mask: vec![true; horizon],
        })
    }
}

/// Plays back a recorded action stream, resampled to the control rate.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    space: ActionSpace,
    actions: Vec<Vec<f64>>,
}

impl ReplayPolicy {
    /// Stream for `episode` at `control_rate`. At the episode's own rate the
    /// recorded actions are used verbatim.
    pub fn from_episode(episode: &DemoEpisode, space: ActionSpace, control_rate: f64) -> Result<Self, ExecutorError> {
        if episode.is_empty() {
            return Err(ExecutorError::Policy("episode has no samples".into()));
        }
        let source = episode_actions(episode, space);
        let actions = if control_rate == episode.sample_rate {
            source
        } else {
            resample(&source, episode.sample_rate, control_rate, space)
        };
        Ok(Self { space, actions })
    }

    pub fn from_actions(space: ActionSpace, actions: Vec<Vec<f64>>) -> Self {
        assert!(!actions.is_empty(), "replay needs at least one action");
        Self { space, actions }
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn resample(source: &[Vec<f64>], from_rate: f64, to_rate: f64, space: ActionSpace) -> Vec<Vec<f64>> {
    let span = (source.len() - 1) as f64 / from_rate;
    let n = (span * to_rate + 1e-9).floor() as usize + 1;
    let g = space.gripper_index();
    (0..n)
        .map(|k| {
            let x = k as f64 * from_rate / to_rate;
            let i = (x.floor() as usize).min(source.len() - 1);
            let s = x - i as f64;
            if i + 1 >= source.len() || s == 0.0 {
                return source[i].clone();
            }
            let (a, b) = (&source[i], &source[i + 1]);
            let mut out: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + (y - x) * s).collect();
            out[g] = if s <= 0.5 { a[g] } else { b[g] };
            if let Some(r) = space.orientation_range() {
                let norm = r.clone().map(|d| out[d] * out[d]).sum::<f64>().sqrt();
                r.for_each(|d| out[d] /= norm);
            }
            out
        })
        .collect()
}

impl Policy for ReplayPolicy {
    fn space(&self) -> ActionSpace {
        self.space
    }

    fn predict(&mut self, input: &PolicyInput, horizon: usize) -> Result<ActionChunk, ExecutorError> {
        let t = (input.tick as usize).min(self.actions.len() - 1);
        Ok(ActionChunk::from_stream(
            self.space,
            &self.actions,
            t,
            horizon,
            input.time,
        ))
    }
}

/// Piecewise-linear interpolation between timed joint-space waypoints, held
/// at the ends.
#[derive(Debug, Clone)]
pub struct WaypointPolicy {
    pub control_rate: f64,
    pub waypoints: Vec<(f64, Vec<f64>)>,
}

impl WaypointPolicy {
    pub fn new(control_rate: f64, waypoints: Vec<(f64, Vec<f64>)>) -> Self {
        assert!(!waypoints.is_empty(), "waypoint policy needs at least one waypoint");
        Self {
            control_rate,
            waypoints,
        }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        let w = &self.waypoints;
        let j = w.partition_point(|(wt, _)| *wt <= t);
        if j == 0 {
            return w[0].1.clone();
        }
        if j == w.len() {
            return w[j - 1].1.clone();
        }
        let ((t0, a), (t1, b)) = (&w[j - 1], &w[j]);
        let s = (t - t0) / (t1 - t0);
        let g = a.len() - 1;
        let mut out: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + (y - x) * s).collect();
        out[g] = GripperState::from_f64(a[g]).as_f64();
        out
    }
}

impl Policy for WaypointPolicy {
    fn space(&self) -> ActionSpace {
        ActionSpace::Joint
    }

    fn predict(&mut self, input: &PolicyInput, horizon: usize) -> Result<ActionChunk, ExecutorError> {
        let actions = (0..horizon)
            .map(|i| self.at((input.tick + i as u64) as f64 / self.control_rate))
            .collect();
        Ok(ActionChunk {
            space: ActionSpace::Joint,
            start_timestamp: input.time,
            actions,
            mask: vec![true; horizon],
        })
    }
}
