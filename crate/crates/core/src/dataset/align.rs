use super::{DatasetError, DemoEpisode, FrameRecord, GripperRecord, RobotRecord};
use crate::capture::HandSample;
use crate::geometry::Joints;

/// Samples closer than this to a grid point are copied rather than interpolated.
const ON_GRID_TOL: f64 = 1e-9;

/// `start + k / rate` for every k that stays within `end` (inclusive, with slack).
pub fn grid_times(start: f64, end: f64, rate: f64) -> Vec<f64> {
    if end < start {
        return Vec::new();
    }
    let n = ((end - start) * rate + ON_GRID_TOL).floor() as usize + 1;
    (0..n).map(|k| start + k as f64 / rate).collect()
}

enum Bracket {
    Exact(usize),
    Between(usize, f64),
}

fn bracket(ts: &[f64], t: f64) -> Bracket {
    let j = ts.partition_point(|&x| x < t - ON_GRID_TOL);
    if j < ts.len() && (ts[j] - t).abs() <= ON_GRID_TOL {
        return Bracket::Exact(j);
    }
    if j == 0 {
        return Bracket::Exact(0);
    }
    if j == ts.len() {
        return Bracket::Exact(ts.len() - 1);
    }
    let s = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
    Bracket::Between(j - 1, s)
}

/// Index of the sample nearest to `t`; ties go to the earlier sample.
fn nearest(ts: &[f64], t: f64) -> usize {
    let j = ts.partition_point(|&x| x < t);
    if j == 0 {
        return 0;
    }
    if j == ts.len() {
        return ts.len() - 1;
    }
    if t - ts[j - 1] <= ts[j] - t {
        j - 1
    } else {
        j
    }
}

fn check_ordered(ts: &[f64], name: &'static str) -> Result<(), DatasetError> {
    if ts.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(DatasetError::NotTimeOrdered(name))
    }
}

fn lerp_joints(a: &Joints, b: &Joints, s: f64) -> Joints {
    std::array::from_fn(|j| a[j] + (b[j] - a[j]) * s)
}

/// Resamples every stream onto the episode's rate grid over the span all
/// non-empty streams share.
///
/// Joint vectors and positions are interpolated linearly, orientations by
/// slerp. Gripper state, verdicts, embodiment tags and hand tracking flags use
/// the nearest sample. Frame references use the nearest sample within half a
/// period and are otherwise absent.
pub fn align_streams(episode: &DemoEpisode) -> Result<DemoEpisode, DatasetError> {
    if episode.robot.is_empty() {
        return Err(DatasetError::EmptyEpisode);
    }
    let robot_ts: Vec<f64> = episode.robot.iter().map(|r| r.timestamp).collect();
    let hand_ts: Vec<f64> = episode.hand.iter().map(|h| h.timestamp).collect();
    let grip_ts: Vec<f64> = episode.gripper.iter().map(|g| g.timestamp).collect();
    let frame_ts: Vec<f64> = episode.frames.iter().map(|f| f.timestamp).collect();
    check_ordered(&robot_ts, "robot")?;
    check_ordered(&hand_ts, "hand")?;
    check_ordered(&grip_ts, "gripper")?;
    check_ordered(&frame_ts, "frame")?;

    let streams = [&robot_ts, &hand_ts, &grip_ts, &frame_ts];
    let live = streams.iter().filter(|s| !s.is_empty());
    let start = live.clone().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
    let end = live.map(|s| s[s.len() - 1]).fold(f64::INFINITY, f64::min);
    let grid = grid_times(start, end, episode.sample_rate);
    if grid.len() < 2 {
        return Err(DatasetError::InsufficientOverlap);
    }
    let half_period = 0.5 / episode.sample_rate;

    let mut out = DemoEpisode::new(
        episode.episode_id.clone(),
        episode.scene_ref.clone(),
        episode.base_pose,
        episode.sample_rate,
    );
    for &g in &grid {
        // Grid points that land on a robot sample take its exact timestamp.
        let t = match bracket(&robot_ts, g) {
            Bracket::Exact(i) if (robot_ts[i] - g).abs() <= ON_GRID_TOL => robot_ts[i],
            _ => g,
        };
        out.robot.push(resample_robot(&episode.robot, &robot_ts, t));
        if !hand_ts.is_empty() {
            out.hand.push(resample_hand(&episode.hand, &hand_ts, t));
        }
        if !grip_ts.is_empty() {
            let g = episode.gripper[nearest(&grip_ts, t)];
            out.gripper.push(GripperRecord {
                timestamp: t,
                state: g.state,
            });
        }
        if !frame_ts.is_empty() {
            let i = nearest(&frame_ts, t);
            let frame = if (frame_ts[i] - t).abs() <= half_period + ON_GRID_TOL {
                FrameRecord {
                    timestamp: t,
                    ..episode.frames[i].clone()
                }
            } else {
                FrameRecord::empty(t)
            };
            out.frames.push(frame);
        }
    }
    for f in &out.frames {
        for r in [&f.egocentric, &f.external, &f.mask].into_iter().flatten() {
            if let Some(bytes) = episode.blobs.get(r) {
                out.blobs.insert(r.clone(), bytes.clone());
            }
        }
    }
    Ok(out)
}

fn resample_robot(robot: &[RobotRecord], ts: &[f64], t: f64) -> RobotRecord {
    match bracket(ts, t) {
        Bracket::Exact(i) => RobotRecord {
            timestamp: t,
            ..robot[i]
        },
        Bracket::Between(i, s) => {
            let (a, b) = (&robot[i], &robot[i + 1]);
            let near = if s <= 0.5 { a } else { b };
            RobotRecord {
                timestamp: t,
                q: lerp_joints(&a.q, &b.q, s),
                ee: a.ee.interpolate(&b.ee, s),
                verdict: near.verdict,
                embodiment: near.embodiment,
            }
        }
    }
}

fn resample_hand(hand: &[HandSample], ts: &[f64], t: f64) -> HandSample {
    match bracket(ts, t) {
        Bracket::Exact(i) => HandSample {
            timestamp: t,
            ..hand[i]
        },
        Bracket::Between(i, s) => {
            let (a, b) = (&hand[i], &hand[i + 1]);
            HandSample {
                timestamp: t,
                pose: a.pose.interpolate(&b.pose, s),
                pinch_distance: a.pinch_distance + (b.pinch_distance - a.pinch_distance) * s,
                tracked: if s <= 0.5 { a.tracked } else { b.tracked },
            }
        }
    }
}
