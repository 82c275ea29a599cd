use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capture::{GripperState, HandSample};
use crate::geometry::{Joints, Pose};
use crate::workspace::VerdictStatus;

/// Who produced a record. Downstream processing treats both identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embodiment {
    Human,
    RobotOverlay,
}

impl Embodiment {
    pub fn code(self) -> u8 {
        match self {
            Embodiment::Human => 0,
            Embodiment::RobotOverlay => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Embodiment::Human),
            1 => Some(Embodiment::RobotOverlay),
            _ => None,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Embodiment::Human => Embodiment::RobotOverlay,
            Embodiment::RobotOverlay => Embodiment::Human,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotRecord {
    pub timestamp: f64,
    pub q: Joints,
    pub ee: Pose,
    /// Verdict at capture time.
    pub verdict: VerdictStatus,
    pub embodiment: Embodiment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperRecord {
    pub timestamp: f64,
    pub state: GripperState,
}

/// Content-addressed references to the frames captured at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub egocentric: Option<String>,
    pub external: Option<String>,
    /// Externally produced masked frame, or none.
    pub mask: Option<String>,
}

impl FrameRecord {
    pub fn empty(timestamp: f64) -> Self {
        Self {
            timestamp,
            egocentric: None,
            external: None,
            mask: None,
        }
    }
}

/// Hex SHA-256 of a frame payload; frames are stored under this name.
pub fn content_ref(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A recorded demonstration: synchronized hand, robot, gripper and frame streams.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoEpisode {
    pub episode_id: String,
    pub scene_ref: String,
    pub base_pose: Pose,
    pub sample_rate: f64,
    pub hand: Vec<HandSample>,
    pub robot: Vec<RobotRecord>,
    pub gripper: Vec<GripperRecord>,
    pub frames: Vec<FrameRecord>,
    /// Frame payloads keyed by their content reference.
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl DemoEpisode {
    pub fn new(episode_id: impl Into<String>, scene_ref: impl Into<String>, base_pose: Pose, sample_rate: f64) -> Self {
        Self {
            episode_id: episode_id.into(),
            scene_ref: scene_ref.into(),
            base_pose,
            sample_rate,
            hand: Vec::new(),
            robot: Vec::new(),
            gripper: Vec::new(),
            frames: Vec::new(),
            blobs: BTreeMap::new(),
        }
    }

    /// Number of robot samples.
    pub fn len(&self) -> usize {
        self.robot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robot.is_empty()
    }

    /// Sample count over sample rate.
    pub fn duration(&self) -> f64 {
        self.robot.len() as f64 / self.sample_rate
    }

    /// Stores `bytes` and returns its reference.
    pub fn add_blob(&mut self, bytes: Vec<u8>) -> String {
        let r = content_ref(&bytes);
        self.blobs.entry(r.clone()).or_insert(bytes);
        r
    }

    pub fn with_swapped_embodiment(&self) -> Self {
        let mut e = self.clone();
        for r in &mut e.robot {
            r.embodiment = r.embodiment.swapped();
        }
        e
    }
}
