use serde::{Deserialize, Serialize};

use super::{DatasetError, DemoEpisode};
use crate::capture::GripperState;
use crate::geometry::{Joints, Pose};

pub const DEFAULT_HORIZON: usize = 100;

/// Action parameterization. Both spaces end with the gripper channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// Six joint angles then gripper.
    #[default]
    Joint,
    /// Position, `[w, x, y, z]` orientation, then gripper.
    EePose,
}

impl ActionSpace {
    pub fn dim(self) -> usize {
        match self {
            ActionSpace::Joint => 7,
            ActionSpace::EePose => 8,
        }
    }

    pub fn gripper_index(self) -> usize {
        self.dim() - 1
    }

    /// Range of quaternion components, if the space has any.
    pub fn orientation_range(self) -> Option<std::ops::Range<usize>> {
        match self {
            ActionSpace::Joint => None,
            ActionSpace::EePose => Some(3..7),
        }
    }

    pub fn encode(self, q: &Joints, ee: &Pose, gripper: GripperState) -> Vec<f64> {
        let mut a = Vec::with_capacity(self.dim());
        match self {
            ActionSpace::Joint => a.extend_from_slice(q),
            ActionSpace::EePose => {
                let c = ee.canonical();
                a.extend(c.position.iter());
                a.extend_from_slice(&c.wxyz());
            }
        }
        a.push(gripper.as_f64());
        a
    }
}

/// Fixed-length action sequence with a validity mask; padded entries repeat
/// the final real action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub space: ActionSpace,
    pub start_timestamp: f64,
    pub actions: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Chunk over `actions[t..t + h]`, padded past the end.
    pub fn from_stream(space: ActionSpace, actions: &[Vec<f64>], t: usize, h: usize, start_timestamp: f64) -> Self {
        let last = actions.len() - 1;
        let (actions, mask) = (t..t + h).map(|i| (actions[i.min(last)].clone(), i <= last)).unzip();
        Self {
            space,
            start_timestamp,
            actions,
            mask,
        }
    }
}

/// Proprioception and frame references at one grid step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: f64,
    pub q: Joints,
    pub ee: Pose,
    pub gripper: GripperState,
    pub egocentric: Option<String>,
    pub external: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationActionPair {
    pub observation: Observation,
    pub chunk: ActionChunk,
}

/// Gripper state in effect at each robot sample (latest record at or before it).
fn gripper_per_sample(episode: &DemoEpisode) -> Vec<GripperState> {
    let mut out = Vec::with_capacity(episode.robot.len());
    let mut j = 0;
    let mut state = episode.gripper.first().map(|g| g.state).unwrap_or_default();
    for r in &episode.robot {
        while j < episode.gripper.len() && episode.gripper[j].timestamp <= r.timestamp + 1e-9 {
            state = episode.gripper[j].state;
            j += 1;
        }
        out.push(state);
    }
    out
}

/// One action per robot sample.
pub fn episode_actions(episode: &DemoEpisode, space: ActionSpace) -> Vec<Vec<f64>> {
    episode
        .robot
        .iter()
        .zip(gripper_per_sample(episode))
        .map(|(r, g)| space.encode(&r.q, &r.ee, g))
        .collect()
}

/// One observation/chunk pair per grid step of an aligned episode.
pub fn extract_chunks(
    episode: &DemoEpisode,
    h: usize,
    space: ActionSpace,
) -> Result<Vec<ObservationActionPair>, DatasetError> {
    if h == 0 {
        return Err(DatasetError::InvalidHorizon);
    }
    if episode.is_empty() {
        return Err(DatasetError::EmptyEpisode);
    }
    let actions = episode_actions(episode, space);
    let grippers = gripper_per_sample(episode);
    Ok(episode
        .robot
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let frame = episode
                .frames
                .iter()
                .find(|f| (f.timestamp - r.timestamp).abs() <= 1e-9);
            ObservationActionPair {
                observation: Observation {
                    timestamp: r.timestamp,
                    q: r.q,
                    ee: r.ee,
                    gripper: grippers[t],
                    egocentric: frame.and_then(|f| f.egocentric.clone()),
                    external: frame.and_then(|f| f.external.clone()),
                },
                chunk: ActionChunk::from_stream(space, &actions, t, h, r.timestamp),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Embodiment, GripperRecord, RobotRecord};
    use crate::workspace::VerdictStatus;

    fn episode(n: usize) -> DemoEpisode {
        let mut e = DemoEpisode::new("e", "s", Pose::identity(), 10.0);
        for k in 0..n {
            let t = k as f64 * 0.1;
            e.robot.push(RobotRecord {
                timestamp: t,
                q: [k as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
                ee: Pose::from_translation(k as f64, 0.0, 0.0),
                verdict: VerdictStatus::Feasible,
                embodiment: Embodiment::RobotOverlay,
            });
            e.gripper.push(GripperRecord {
                timestamp: t,
                state: if k >= 4 {
                    GripperState::Closed
                } else {
                    GripperState::Open
                },
            });
        }
        e
    }

    #[test]
    fn tail_chunk_is_padded_with_last_action() {
        let pairs = extract_chunks(&episode(10), 100, ActionSpace::Joint).unwrap();
        assert_eq!(pairs.len(), 10);
        let c = &pairs[5].chunk;
        assert_eq!(c.horizon(), 100);
        assert_eq!(c.valid_len(), 5);
        assert!(c.mask[..5].iter().all(|&m| m));
        assert!(c.actions[5..].iter().all(|a| a[0] == 9.0 && a[6] == 1.0));
        assert_eq!(pairs[5].observation.timestamp, c.start_timestamp);
    }

    #[test]
    fn interior_chunk_has_no_padding() {
        let pairs = extract_chunks(&episode(200), 100, ActionSpace::Joint).unwrap();
        assert!(pairs[0].chunk.mask.iter().all(|&m| m));
    }

    #[test]
    fn ee_space_layout() {
        let pairs = extract_chunks(&episode(3), 2, ActionSpace::EePose).unwrap();
        assert_eq!(pairs[1].chunk.actions[0], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            extract_chunks(&episode(0), 10, ActionSpace::Joint),
            Err(DatasetError::EmptyEpisode)
        ));
        assert!(matches!(
            extract_chunks(&episode(3), 0, ActionSpace::Joint),
            Err(DatasetError::InvalidHorizon)
        ));
    }
}
