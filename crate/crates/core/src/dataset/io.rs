//! Episode directory layout:
//!
//! ```text
//! <episode_id>/
//!   manifest.toml        version, ids, rate, base pose, counts, sha256 checksums
//!   hand.bin             rows of t, px, py, pz, qw, qx, qy, qz, pinch, tracked
//!   robot.bin            rows of t, q0..q5, px, py, pz, qw, qx, qy, qz, verdict, embodiment
//!   gripper.bin          rows of t, state (0 open, 1 closed)
//!   frames/index.json    frame records
//!   frames/<sha256>      frame payloads
//! ```
//!
//! Binary files hold little-endian f64 values, row-major.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{content_ref, DatasetError, DemoEpisode, Embodiment, FrameRecord, GripperRecord, RobotRecord};
use crate::capture::{GripperState, HandSample};
use crate::geometry::Pose;
use crate::workspace::VerdictStatus;

pub const EPISODE_FORMAT_VERSION: u32 = 1;
pub const NORMALIZATION_FILE: &str = "normalization.toml";
const MANIFEST: &str = "manifest.toml";
const HAND_ROW: usize = 10;
const ROBOT_ROW: usize = 16;
const GRIPPER_ROW: usize = 2;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    episode_id: String,
    scene_ref: String,
    sample_rate: f64,
    duration: f64,
    base_pose: RawPose,
    counts: Counts,
    checksums: Checksums,
}

/// Pose with the quaternion exactly as stored, sign included.
#[derive(Debug, Serialize, Deserialize)]
struct RawPose {
    position: [f64; 3],
    orientation: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Counts {
    hand: usize,
    robot: usize,
    gripper: usize,
    frames: usize,
    blobs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checksums {
    hand: String,
    robot: String,
    gripper: String,
    frames: String,
}

fn encode(rows: impl Iterator<Item = Vec<f64>>) -> Vec<u8> {
    rows.flatten().flat_map(f64::to_le_bytes).collect()
}

fn push_pose(row: &mut Vec<f64>, p: &Pose) {
    row.extend(p.position.iter());
    row.extend_from_slice(&p.wxyz());
}

fn pose_at(row: &[f64]) -> Pose {
    Pose::from_raw_parts([row[0], row[1], row[2]], [row[3], row[4], row[5], row[6]])
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the episode to `<root>/<episode_id>` via a temporary sibling
/// directory and a rename, replacing any existing copy.
pub fn write_episode(episode: &DemoEpisode, root: impl AsRef<Path>) -> Result<PathBuf, DatasetError> {
    let root = root.as_ref();
    std::fs::create_dir_all(root)?;
    let target = root.join(&episode.episode_id);
    let staging = root.join(format!(".{}.partial-{}", episode.episode_id, std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(staging.join("frames"))?;

    let hand = encode(episode.hand.iter().map(|h| {
        let mut row = vec![h.timestamp];
        push_pose(&mut row, &h.pose);
        row.push(h.pinch_distance);
        row.push(if h.tracked { 1.0 } else { 0.0 });
        row
    }));
    let robot = encode(episode.robot.iter().map(|r| {
        let mut row = vec![r.timestamp];
        row.extend_from_slice(&r.q);
        push_pose(&mut row, &r.ee);
        row.push(r.verdict.code() as f64);
        row.push(r.embodiment.code() as f64);
        row
    }));
    let gripper = encode(episode.gripper.iter().map(|g| vec![g.timestamp, g.state.as_f64()]));
    let frames = serde_json::to_vec_pretty(&episode.frames).map_err(|e| DatasetError::Format(e.to_string()))?;

    std::fs::write(staging.join("hand.bin"), &hand)?;
    std::fs::write(staging.join("robot.bin"), &robot)?;
    std::fs::write(staging.join("gripper.bin"), &gripper)?;
    std::fs::write(staging.join("frames/index.json"), &frames)?;
    for (name, bytes) in &episode.blobs {
        std::fs::write(staging.join("frames").join(name), bytes)?;
    }
    let manifest = Manifest {
        format_version: EPISODE_FORMAT_VERSION,
        episode_id: episode.episode_id.clone(),
        scene_ref: episode.scene_ref.clone(),
        sample_rate: episode.sample_rate,
        duration: episode.duration(),
        base_pose: RawPose {
            position: episode.base_pose.position.into(),
            orientation: episode.base_pose.wxyz(),
        },
        counts: Counts {
            hand: episode.hand.len(),
            robot: episode.robot.len(),
            gripper: episode.gripper.len(),
            frames: episode.frames.len(),
            blobs: episode.blobs.len(),
        },
        checksums: Checksums {
            hand: sha(&hand),
            robot: sha(&robot),
            gripper: sha(&gripper),
            frames: sha(&frames),
        },
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    std::fs::write(staging.join(MANIFEST), text)?;

    if target.exists() {
        std::fs::remove_dir_all(&target)?;
    }
    std::fs::rename(&staging, &target)?;
    Ok(target)
}

fn read_checked(dir: &Path, name: &str, rows: usize, width: usize, checksum: &str) -> Result<Vec<f64>, DatasetError> {
    let bytes = std::fs::read(dir.join(name))?;
    let expected = rows * width * 8;
    if bytes.len() != expected {
        return Err(DatasetError::Truncated {
            file: name.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    if sha(&bytes) != checksum {
        return Err(DatasetError::ChecksumMismatch(name.to_string()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn code(v: f64, what: &str) -> Result<u8, DatasetError> {
    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
        Ok(v as u8)
    } else {
        Err(DatasetError::Format(format!("invalid {what} code {v}")))
    }
}

pub fn read_episode(dir: impl AsRef<Path>) -> Result<DemoEpisode, DatasetError> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let version: toml::Table = toml::from_str(&text).map_err(|e| DatasetError::Format(e.to_string()))?;
    match version.get("format_version").and_then(|v| v.as_integer()) {
        Some(v) if v == EPISODE_FORMAT_VERSION as i64 => {}
        Some(v) => {
            return Err(DatasetError::FormatVersionMismatch {
                found: v as u32,
                expected: EPISODE_FORMAT_VERSION,
            })
        }
        None => return Err(DatasetError::Format("manifest has no format_version".into())),
    }
    let m: Manifest = toml::from_str(&text).map_err(|e| DatasetError::Format(e.to_string()))?;
    if !(m.sample_rate > 0.0) {
        return Err(DatasetError::Format("sample_rate must be positive".into()));
    }
    if (m.duration - m.counts.robot as f64 / m.sample_rate).abs() > 1e-9 {
        return Err(DatasetError::Format(format!(
            "duration {} does not match {} samples at {} Hz",
            m.duration, m.counts.robot, m.sample_rate
        )));
    }

    let mut episode = DemoEpisode::new(
        m.episode_id,
        m.scene_ref,
        Pose::from_raw_parts(m.base_pose.position, m.base_pose.orientation),
        m.sample_rate,
    );
    let hand = read_checked(dir, "hand.bin", m.counts.hand, HAND_ROW, &m.checksums.hand)?;
    for row in hand.chunks_exact(HAND_ROW) {
        episode.hand.push(HandSample {
            timestamp: row[0],
            pose: pose_at(&row[1..8]),
            pinch_distance: row[8],
            tracked: row[9] != 0.0,
        });
    }
    let robot = read_checked(dir, "robot.bin", m.counts.robot, ROBOT_ROW, &m.checksums.robot)?;
    for row in robot.chunks_exact(ROBOT_ROW) {
        episode.robot.push(RobotRecord {
            timestamp: row[0],
            q: row[1..7].try_into().expect("six joints"),
            ee: pose_at(&row[7..14]),
            verdict: VerdictStatus::from_code(code(row[14], "verdict")?)
                .ok_or_else(|| DatasetError::Format(format!("unknown verdict code {}", row[14])))?,
            embodiment: Embodiment::from_code(code(row[15], "embodiment")?)
                .ok_or_else(|| DatasetError::Format(format!("unknown embodiment code {}", row[15])))?,
        });
    }
    let gripper = read_checked(dir, "gripper.bin", m.counts.gripper, GRIPPER_ROW, &m.checksums.gripper)?;
    for row in gripper.chunks_exact(GRIPPER_ROW) {
        episode.gripper.push(GripperRecord {
            timestamp: row[0],
            state: GripperState::from_f64(row[1]),
        });
    }

    let index = std::fs::read(dir.join("frames/index.json"))?;
    if sha(&index) != m.checksums.frames {
        return Err(DatasetError::ChecksumMismatch("frames/index.json".into()));
    }
    let frames: Vec<FrameRecord> = serde_json::from_slice(&index).map_err(|e| DatasetError::Format(e.to_string()))?;
    if frames.len() != m.counts.frames {
        return Err(DatasetError::Format(format!(
            "frame index has {} records, manifest declares {}",
            frames.len(),
            m.counts.frames
        )));
    }
    let mut blobs = BTreeMap::new();
    for entry in std::fs::read_dir(dir.join("frames"))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "index.json" {
            continue;
        }
        let bytes = std::fs::read(entry.path())?;
        if content_ref(&bytes) != name {
            return Err(DatasetError::ChecksumMismatch(format!("frames/{name}")));
        }
        blobs.insert(name, bytes);
    }
    if blobs.len() != m.counts.blobs {
        return Err(DatasetError::Truncated {
            file: "frames/".into(),
            expected: m.counts.blobs,
            found: blobs.len(),
        });
    }
    episode.frames = frames;
    episode.blobs = blobs;
    Ok(episode)
}

/// Episode directories under `root`, sorted by name.
pub fn list_episodes(root: impl AsRef<Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join(MANIFEST).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
