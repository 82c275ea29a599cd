//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ghostarm_core::capture::{CaptureConfig, CaptureSession, ControllerCommand, HandSample, Mode};
use ghostarm_core::dataset::{
    align_streams, episode_actions, extract_chunks, read_episode, write_episode, ActionSpace, DemoEpisode, Embodiment,
    FrameRecord, GripperRecord, RobotRecord,
};
use ghostarm_core::executor::{
    run_policy_loop, ConstantPolicy, ExecutionSchedule, ExecutorConfig, FeedbackSource, Policy, PolicyInput,
    ReplayPolicy, TraceRecord, VecSink,
};
use ghostarm_core::kinematics::{
    cycle_solution, forward_kinematics, inverse_kinematics, jacobian, max_wrapped_difference, ArmModel,
};
use ghostarm_core::scripted::{
    gripper_down, pickplace, run_capture, stack, tabletop_cloud, RecipeParams, RunOptions, ScriptedTrajectory,
    TaskBundle, TimedCommand, Waypoint,
};
use ghostarm_core::validator::{render_table, replay_validate, summarize, ValidateOptions};
use ghostarm_core::workspace::{
    check_step, min_distance, min_distance_brute_force, placed_capsules, EnvironmentCloud, PlacedCapsule, Scene,
    Thresholds, VerdictStatus,
};
use ghostarm_core::{Joints, Pose};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_q(rng: &mut ChaCha8Rng, model: &ArmModel) -> Joints {
    std::array::from_fn(|i| {
        let l = model.joint_limits[i];
        rng.random_range(l.min..l.max)
    })
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn record(bundle: &TaskBundle, model: &ArmModel) -> DemoEpisode {
    let mut session = CaptureSession::calibrated(
        model.clone(),
        Arc::new(bundle.scene.clone()),
        CaptureConfig::default(),
        &bundle.name,
    );
    let run = run_capture(
        &mut session,
        &bundle.trajectory,
        RunOptions {
            detour: bundle.detour,
            ..Default::default()
        },
    )
    .expect("scripted capture");
    assert_eq!(
        run.episodes.len(),
        1,
        "{} produced {} episodes",
        bundle.name,
        run.episodes.len()
    );
    run.episodes.into_iter().next().unwrap()
}

fn bits_equal(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()))
}

fn ik_round_trip() -> Outcome {
    let model = ArmModel::ur3e();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let configs: Vec<Joints> = (0..1000).map(|_| random_q(&mut rng, &model)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for q in &configs {
        let set =
            inverse_kinematics(&model, &forward_kinematics(&model, q), None).map_err(|e| format!("{q:?}: {e}"))?;
        let best = set
            .solutions
            .iter()
            .map(|s| max_wrapped_difference(&s.q, q))
            .fold(f64::INFINITY, f64::min);
        ensure!(best <= 1e-6, "q {q:?} not recovered (closest {best:e} rad)");
        worst = worst.max(best);
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "took {elapsed:.2} s");
    Ok(format!("1000 configs, worst {worst:.1e} rad, {elapsed:.3} s"))
}

fn pose_preservation() -> Outcome {
    let model = ArmModel::ur3e();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut branches = 0;
    for _ in 0..1000 {
        let target = forward_kinematics(&model, &random_q(&mut rng, &model));
        let set = inverse_kinematics(&model, &target, None).map_err(|e| e.to_string())?;
        for s in &set.solutions {
            let fk = forward_kinematics(&model, &s.q);
            let (dp, da) = (fk.position_error(&target), fk.angular_error(&target));
            ensure!(
                dp <= 1e-6 && da <= 1e-6,
                "branch {} misses target by {dp:e} m / {da:e} rad",
                s.branch
            );
        }
        branches += set.len();
        for direction in [1, -1] {
            let mut cur = set.clone();
            for _ in 0..set.len() {
                cur = cycle_solution(&cur, direction).map_err(|e| e.to_string())?;
            }
            ensure!(
                cur.selected_index == set.selected_index,
                "cycling did not return to the start"
            );
            ensure!(
                cur.selected().map(|s| s.q) == set.selected().map(|s| s.q),
                "selected branch changed"
            );
        }
    }
    Ok(format!("1000 targets, {branches} branches"))
}

fn jacobian_fd() -> Outcome {
    let model = ArmModel::ur3e();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = random_q(&mut rng, &model);
        let j = jacobian(&model, &q);
        for i in 0..6 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            let (fp, fm) = (forward_kinematics(&model, &qp), forward_kinematics(&model, &qm));
            let v = (fp.position - fm.position) / (2.0 * h);
            let w = (fp.orientation * fm.orientation.inverse()).scaled_axis() / (2.0 * h);
            for r in 0..3 {
                worst = worst.max((j[(r, i)] - v[r]).abs()).max((j[(r + 3, i)] - w[r]).abs());
            }
        }
    }
    ensure!(worst < 1e-5, "max entry error {worst:e}");
    Ok(format!("100 configs, max entry error {worst:.1e}"))
}

fn collision_oracle() -> Outcome {
    let model = ArmModel::ur3e();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut positive = 0;
    for scene in 0..100 {
        let q = random_q(&mut rng, &model);
        let caps = placed_capsules(&model, &q);
        let mut pts = Vec::with_capacity(10_000);
        while pts.len() < 10_000 {
            let p = Vector3::new(
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
            );
            // Half of the scenes keep a free margin around the arm.
            if scene % 2 == 1 && caps.iter().any(|c| c.point_distance(&p) < 0.03) {
                continue;
            }
            pts.push(p);
        }
        let voxel = rng.random_range(0.02..0.25);
        let cloud = EnvironmentCloud::new(pts, "random")
            .map_err(|e| e.to_string())?
            .with_index(voxel);
        let fast = min_distance(&model, &q, &cloud);
        let slow = min_distance_brute_force(&model, &q, &cloud);
        ensure!(fast == slow, "scene {scene}: indexed {fast:?} != brute force {slow:?}");
        positive += (fast.distance > 0.0) as usize;
    }

    let cap = PlacedCapsule {
        link: 0,
        a: Vector3::new(-1.0, 0.0, 0.0),
        b: Vector3::new(1.0, 0.0, 0.0),
        radius: 0.1,
    };
    let cases = [
        ("perpendicular", cap.point_distance(&Vector3::new(0.3, 0.5, 0.0)), 0.4),
        ("endpoint", cap.point_distance(&Vector3::new(1.3, 0.4, 0.0)), 0.4),
        ("inside", cap.point_distance(&Vector3::new(0.2, 0.0, 0.05)), -0.05),
    ];
    for (name, got, want) in cases {
        ensure!((got - want).abs() <= 1e-9, "{name}: {got} vs {want}");
    }
    let other = PlacedCapsule {
        link: 3,
        a: Vector3::new(0.25, 0.7, -1.0),
        b: Vector3::new(0.25, 0.7, 1.0),
        radius: 0.05,
    };
    let d = ghostarm_core::workspace::capsule_distance(&cap, &other);
    ensure!((d - 0.55).abs() <= 1e-9, "skew capsules: {d}");

    let plane = EnvironmentCloud::new(tabletop_cloud([-1.0, 1.0], [-1.0, 1.0], 0.01), "plane")
        .map_err(|e| e.to_string())?
        .with_index(0.05);
    let (a, b, r) = (Vector3::new(-0.3, 0.25, 0.2), Vector3::new(0.4, 0.25, 0.2), 0.05);
    let flat = plane.nearest_to_segment(&a, &b).unwrap() - r;
    ensure!((flat - 0.2).abs() <= 1e-9, "parallel capsule over plane: {flat}");
    let tilted = plane.nearest_to_segment(&a, &Vector3::new(0.4, 0.6, 0.2)).unwrap() - r;
    ensure!((tilted - 0.2).abs() <= 1e-9, "tilted capsule over plane: {tilted}");
    Ok(format!(
        "100 scenes x 10k points equal ({positive} with positive clearance); analytic cases within 1e-9"
    ))
}

/// Random hand script, obstacles and commands for one fuzzed session.
fn fuzz_session(seed: u64, model: &ArmModel) -> (Scene, ScriptedTrajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = tabletop_cloud([-0.6, 0.2], [-0.46, 0.46], 0.04);
    for _ in 0..rng.random_range(0..4) {
        let c = Vector3::new(
            rng.random_range(-0.55..0.1),
            rng.random_range(0.05..0.45),
            rng.random_range(-0.45..0.45),
        );
        let half = rng.random_range(0.02..0.08);
        let n = (2.0 * half / 0.02f64).ceil() as usize;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let o = Vector3::new(i as f64, j as f64, k as f64) * (2.0 * half / n as f64);
                    points.push(c - Vector3::repeat(half) + o);
                }
            }
        }
    }
    let scene = Scene::new(
        format!("fuzz-{seed}"),
        EnvironmentCloud::new(points, "fuzz").expect("finite points"),
        Thresholds::default(),
        Vec::new(),
    );

    let home = forward_kinematics(model, &model.home);
    let mut waypoints = vec![Waypoint {
        time: 0.0,
        pose: home,
        pinch: 0.08,
    }];
    let mut t = 0.0;
    for _ in 0..rng.random_range(3..7) {
        let last = waypoints[waypoints.len() - 1];
        if rng.random_bool(0.2) {
            // Teleport: a large jump within one hand frame.
            let jump = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            waypoints.push(Waypoint {
                time: t + 1.0 / 30.0,
                pose: Pose::new(
                    last.pose.position + jump.normalize() * rng.random_range(0.2..0.6),
                    last.pose.orientation,
                ),
                pinch: last.pinch,
            });
            // Tracking glitch: the hand is back where it was a few frames later.
            t += 0.2;
            waypoints.push(Waypoint { time: t, ..last });
            continue;
        }
        t += rng.random_range(0.8..3.0);
        let tilt = UnitQuaternion::from_scaled_axis(
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * rng.random_range(0.0..0.5),
        );
        waypoints.push(Waypoint {
            time: t,
            pose: Pose::new(
                Vector3::new(
                    rng.random_range(-0.55..0.1),
                    rng.random_range(0.05..0.45),
                    rng.random_range(-0.45..0.45),
                ),
                tilt * gripper_down(),
            ),
            pinch: rng.random_range(0.0..0.1),
        });
    }
    let commands = (0..rng.random_range(2..9))
        .map(|_| {
            let command = match rng.random_range(0..6) {
                0 => ControllerCommand::StartRecording,
                1 => ControllerCommand::StopRecording,
                2 => ControllerCommand::CycleSolution {
                    direction: if rng.random_bool(0.5) { 1 } else { -1 },
                },
                3 => ControllerCommand::BeginBaseCalibration,
                4 => ControllerCommand::EndBaseCalibration,
                _ => ControllerCommand::BaseJog {
                    translation: [rng.random_range(-0.05..0.05), 0.0, rng.random_range(-0.05..0.05)],
                },
            };
            TimedCommand {
                time: rng.random_range(0.0..t),
                command,
            }
        })
        .collect();
    let trajectory = ScriptedTrajectory {
        waypoints,
        noise: Some([0.002; 3]),
        seed,
        commands,
    };
    (scene, trajectory)
}

fn capture_safety() -> Outcome {
    let model = ArmModel::ur3e();
    let (mut episodes, mut samples, mut freezes) = (0, 0, 0);
    for seed in 0..1000 {
        let (scene, trajectory) = fuzz_session(seed, &model);
        let scene = Arc::new(scene);
        let mut session = CaptureSession::calibrated(model.clone(), scene.clone(), CaptureConfig::default(), "fuzz");
        let run =
            run_capture(&mut session, &trajectory, RunOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        freezes += run.freezes;
        for e in &run.episodes {
            episodes += 1;
            samples += e.len();
            let report =
                replay_validate(e, &scene, &model, ValidateOptions::default()).map_err(|err| err.to_string())?;
            ensure!(
                report.success,
                "seed {seed}: recorded episode fails replay at {:?}",
                report.failure_index
            );
            for (i, r) in e.robot.iter().enumerate() {
                ensure!(
                    r.verdict == VerdictStatus::Feasible,
                    "seed {seed}: sample {i} stored as {}",
                    r.verdict
                );
            }
            for (i, w) in e.robot.windows(2).enumerate() {
                let dt = w[1].timestamp - w[0].timestamp;
                ensure!(dt > 0.0, "seed {seed}: timestamps not increasing at {i}");
                for j in 0..6 {
                    let v = (w[1].q[j] - w[0].q[j]).abs() / dt;
                    ensure!(
                        v <= model.speed_limits[j],
                        "seed {seed}: joint {j} at {v} rad/s between samples {i} and {}",
                        i + 1
                    );
                }
            }
        }
    }
    ensure!(samples > 0, "no samples were recorded");
    Ok(format!(
        "1000 sessions, {episodes} episodes ({samples} samples) all feasible and replay-valid, {freezes} freezes"
    ))
}

fn freeze_realign() -> Outcome {
    let model = ArmModel::ur3e();
    let scene = Arc::new(Scene::new(
        "table",
        EnvironmentCloud::new(tabletop_cloud([-0.6, 0.2], [-0.46, 0.46], 0.02), "table").unwrap(),
        Thresholds::default(),
        Vec::new(),
    ));
    let config = CaptureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut trials = 0;
    while trials < 200 {
        let start = Pose::new(
            Vector3::new(
                rng.random_range(-0.45..-0.25),
                rng.random_range(0.15..0.3),
                rng.random_range(-0.2..0.2),
            ),
            gripper_down(),
        );
        let mut s = CaptureSession::calibrated(model.clone(), scene.clone(), config.clone(), "freeze");
        let k = std::cell::Cell::new(0u32);
        let next = |s: &mut CaptureSession, pose: Pose| {
            k.set(k.get() + 1);
            s.step(&HandSample::new(k.get() as f64 * 0.1, pose, 0.08)).unwrap()
        };
        if !next(&mut s, start).verdict.is_some_and(|v| v.is_feasible()) {
            continue;
        }
        trials += 1;
        s.handle_command(ControllerCommand::StartRecording).unwrap();
        let mut pose = start;
        let mut expected = 0;
        for _ in 0..rng.random_range(3..10) {
            pose.position += Vector3::new(rng.random_range(-0.005..0.005), 0.0, rng.random_range(-0.005..0.005));
            let fb = next(&mut s, pose);
            ensure!(fb.appended, "smooth motion was not recorded");
            expected += 1;
        }
        let frozen = s.state().last_valid.unwrap();
        let dir = unit(&mut rng);
        let fb = next(&mut s, Pose::new(pose.position + dir * 0.5, pose.orientation));
        ensure!(fb.mode == Mode::AwaitingRealignment, "teleport gave mode {}", fb.mode);
        ensure!(
            !fb.appended && fb.end_effector_red,
            "teleport sample was recorded or not flagged"
        );
        let overlay_bits = |fb: &ghostarm_core::capture::OverlayFeedback| fb.overlay_q.map(|q| q.map(f64::to_bits));
        let frozen_bits = Some(frozen.config.q.map(f64::to_bits));
        ensure!(overlay_bits(&fb) == frozen_bits, "overlay not frozen at last valid");

        // Outside tolerance: either position beyond 2 cm or rotation beyond 5 degrees.
        for _ in 0..rng.random_range(2..6) {
            let away = if rng.random_bool(0.5) {
                let d = unit(&mut rng);
                Pose::new(
                    frozen.pose.position + d * rng.random_range(0.0205..0.3),
                    frozen.pose.orientation,
                )
            } else {
                let axis = unit(&mut rng);
                let angle = rng.random_range(5.1f64..40.0).to_radians();
                Pose::new(
                    frozen.pose.position,
                    UnitQuaternion::from_scaled_axis(axis * angle) * frozen.pose.orientation,
                )
            };
            let fb = next(&mut s, away);
            ensure!(fb.mode == Mode::AwaitingRealignment, "resumed outside tolerance");
            ensure!(overlay_bits(&fb) == frozen_bits, "overlay moved while frozen");
            ensure!(
                s.state().last_valid.unwrap() == frozen,
                "last valid changed while frozen"
            );
        }
        let paused_from = frozen.config.timestamp;
        // Back inside tolerance, at a pose the arm can take from the frozen configuration.
        let back = loop {
            let d = unit(&mut rng);
            let axis = unit(&mut rng);
            let back = Pose::new(
                frozen.pose.position + d * rng.random_range(0.0..0.019),
                UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0f64..4.9).to_radians())
                    * frozen.pose.orientation,
            );
            let reachable = inverse_kinematics(&model, &back, Some(&frozen.config.q)).is_ok_and(|set| {
                let dt = (k.get() + 1) as f64 * 0.1 - paused_from;
                check_step(&model, &frozen.config.q, &set.solutions[0].q, dt, &scene).is_feasible()
            });
            if reachable {
                break back;
            }
        };
        let fb = next(&mut s, back);
        ensure!(
            fb.mode == Mode::Recording,
            "did not resume inside tolerance (mode {}, verdict {:?}, dp {:.4}, da {:.4})",
            fb.mode,
            s.state().last_verdict,
            back.position_error(&frozen.pose),
            back.angular_error(&frozen.pose)
        );
        ensure!(fb.appended, "first sample after resuming was not recorded");
        let resumed_at = k.get() as f64 * 0.1;
        expected += 1;
        for _ in 0..3 {
            let fb = next(&mut s, back);
            ensure!(fb.appended, "stationary sample after resume not recorded");
            expected += 1;
        }
        let ghostarm_core::capture::CommandOutcome::EpisodeFinalized(ep) =
            s.handle_command(ControllerCommand::StopRecording).unwrap()
        else {
            return Err("StopRecording did not finalize".into());
        };
        ensure!(
            ep.len() == expected,
            "recorded {} samples, expected {expected}",
            ep.len()
        );
        ensure!(
            ep.robot
                .iter()
                .all(|r| r.timestamp <= paused_from || r.timestamp >= resumed_at - 1e-9),
            "sample recorded inside the paused interval"
        );
    }
    Ok(format!(
        "{trials} teleport trials frozen bitwise and resumed only inside 2 cm / 5 deg"
    ))
}

fn synthetic_episode(len: usize, rate: f64) -> DemoEpisode {
    let mut e = DemoEpisode::new(format!("len-{len}"), "table", Pose::identity(), rate);
    for k in 0..len {
        let t = k as f64 / rate;
        let x = (k as f64 * 0.37).sin();
        let pose = Pose::new(
            Vector3::new(x, 0.2 + 0.01 * k as f64, -x),
            UnitQuaternion::from_euler_angles(0.1 * x, 0.2, -0.3 * x),
        );
        e.hand.push(HandSample::new(t, pose, 0.05 * (1.0 + x)));
        e.robot.push(RobotRecord {
            timestamp: t,
            q: [x, -x / 3.0, 2.0 * x, 1.0 / 7.0, -0.0, k as f64 * 1e-3],
            ee: pose.canonical(),
            verdict: VerdictStatus::Feasible,
            embodiment: if k % 2 == 0 {
                Embodiment::RobotOverlay
            } else {
                Embodiment::Human
            },
        });
        e.gripper.push(GripperRecord {
            timestamp: t,
            state: if x > 0.0 {
                ghostarm_core::capture::GripperState::Closed
            } else {
                Default::default()
            },
        });
    }
    e
}

fn chunking() -> Outcome {
    let h = 100;
    for len in [1usize, 50, 99, 100, 101, 200] {
        let mut e = synthetic_episode(len, 10.0);
        if len >= 2 {
            let aligned = align_streams(&e).map_err(|err| err.to_string())?;
            ensure!(aligned == e, "on-grid episode of length {len} changed under alignment");
            e = aligned;
        }
        for space in [ActionSpace::Joint, ActionSpace::EePose] {
            let actions = episode_actions(&e, space);
            let pairs = extract_chunks(&e, h, space).map_err(|err| err.to_string())?;
            ensure!(pairs.len() == len, "L={len}: {} pairs", pairs.len());
            for (t, p) in pairs.iter().enumerate() {
                let c = &p.chunk;
                ensure!(
                    c.actions.len() == h && c.mask.len() == h,
                    "L={len} t={t}: chunk length {}",
                    c.actions.len()
                );
                for i in 0..h {
                    ensure!(c.mask[i] == (t + i < len), "L={len} t={t}: mask wrong at {i}");
                    let want = &actions[(t + i).min(len - 1)];
                    ensure!(
                        bits_equal(std::slice::from_ref(&c.actions[i]), std::slice::from_ref(want)),
                        "L={len} t={t}: entry {i}"
                    );
                }
                ensure!(
                    p.observation.timestamp == c.start_timestamp,
                    "observation/chunk timestamps differ"
                );
            }
            let rebuilt: Vec<Vec<f64>> = pairs
                .iter()
                .step_by(h)
                .flat_map(|p| {
                    p.chunk
                        .actions
                        .iter()
                        .zip(&p.chunk.mask)
                        .filter(|(_, m)| **m)
                        .map(|(a, _)| a.clone())
                })
                .collect();
            ensure!(
                bits_equal(&rebuilt, &actions),
                "L={len}: stepped concatenation differs from the stream"
            );
        }
    }
    Ok("L in {1, 50, 99, 100, 101, 200}, h = 100, both action spaces".into())
}

struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl Policy for RandomPolicy {
    fn space(&self) -> ActionSpace {
        ActionSpace::Joint
    }

    fn predict(
        &mut self,
        input: &PolicyInput,
        horizon: usize,
    ) -> Result<ghostarm_core::dataset::ActionChunk, ghostarm_core::executor::ExecutorError> {
        let actions = (0..horizon)
            .map(|_| {
                let mut a: Vec<f64> = (0..6).map(|_| self.rng.random_range(-3.0..3.0)).collect();
                a.push(if self.rng.random_bool(0.5) { 1.0 } else { 0.0 });
                a
            })
            .collect();
        Ok(ghostarm_core::dataset::ActionChunk {
            space: ActionSpace::Joint,
            start_timestamp: input.time,
            actions,
            mask: vec![true; horizon],
        })
    }
}

fn ensembling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for trial in 0..200 {
        let horizon = rng.random_range(1..60);
        let cfg = ExecutorConfig {
            schedule: ExecutionSchedule {
                control_rate: 25.0,
                execute_per_chunk: rng.random_range(1..=horizon),
                horizon,
            },
            decay: if trial % 4 == 0 {
                0.0
            } else {
                rng.random_range(0.0..0.2)
            },
            smoothing_window: 1,
            query_deadline: None,
        };
        let mut policy = RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(trial),
        };
        let ticks = rng.random_range(1..200);
        let trace = run_policy_loop(&mut policy, &cfg, ticks, &mut FeedbackSource, &mut VecSink::default())
            .map_err(|e| e.to_string())?;
        let queries: Vec<(u64, &Vec<Vec<f64>>)> = trace
            .records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Query { tick, prediction, .. } => Some((*tick, prediction)),
                _ => None,
            })
            .collect();
        for r in &trace.records {
            let TraceRecord::Emit {
                tick,
                action,
                contributors,
                ..
            } = r
            else {
                continue;
            };
            let live: Vec<&(u64, &Vec<Vec<f64>>)> = queries
                .iter()
                .filter(|(q, _)| *q <= *tick && tick - q < horizon as u64)
                .collect();
            ensure!(
                contributors.iter().all(|q| tick - q < horizon as u64),
                "tick {tick}: a prediction older than the horizon contributed"
            );
            let (mut num, mut den, mut vote) = (vec![0.0; 6], 0.0, 0.0);
            for (q, pred) in &live {
                let w = (-cfg.decay * (tick - q) as f64).exp();
                let a = &pred[(tick - q) as usize];
                den += w;
                vote += w * a[6];
                for d in 0..6 {
                    num[d] += w * a[d];
                }
            }
            for d in 0..6 {
                let want = num[d] / den;
                ensure!(
                    (action[d] - want).abs() <= 1e-12,
                    "tick {tick} dim {d}: {} vs {want}",
                    action[d]
                );
            }
            let newest = live
                .iter()
                .map(|(q, p)| (*q, p[(tick - q) as usize][6]))
                .max_by_key(|(q, _)| *q)
                .unwrap()
                .1;
            let want_g = if vote / den > 0.5 {
                1.0
            } else if vote / den < 0.5 {
                0.0
            } else {
                newest
            };
            ensure!(action[6] == want_g, "tick {tick}: gripper vote");
            checked += 1;
        }
    }

    let cfg = ExecutorConfig::default();
    let constant = vec![0.3, -1.2, 2.1, -0.4, 1.0, 0.05, 1.0];
    let mut policy = ConstantPolicy {
        space: ActionSpace::Joint,
        action: constant.clone(),
    };
    let mut sink = VecSink::default();
    let trace = run_policy_loop(
        &mut policy,
        &cfg,
        cfg.schedule.ticks_for(5.0),
        &mut FeedbackSource,
        &mut sink,
    )
    .map_err(|e| e.to_string())?;
    ensure!(trace.query_count() == 5, "{} queries in 5 s", trace.query_count());
    ensure!(sink.actions.len() == 125, "{} actions in 5 s", sink.actions.len());
    ensure!(
        sink.actions.iter().all(|a| *a == constant),
        "constant policy output changed"
    );
    let times = trace.query_times();
    ensure!(
        times.windows(2).all(|w| w[1] - w[0] == cfg.schedule.replan_interval()),
        "replan interval {times:?}"
    );
    Ok(format!(
        "{checked} ensembled ticks match the oracle; 5 s default run: 5 queries, 125 actions"
    ))
}

fn episode_bits(e: &DemoEpisode) -> Vec<u64> {
    let mut v = Vec::new();
    let pose = |v: &mut Vec<u64>, p: &Pose| {
        v.extend(p.position.iter().map(|x| x.to_bits()));
        v.extend(p.wxyz().iter().map(|x| x.to_bits()));
    };
    v.push(e.sample_rate.to_bits());
    pose(&mut v, &e.base_pose);
    for h in &e.hand {
        v.push(h.timestamp.to_bits());
        pose(&mut v, &h.pose);
        v.push(h.pinch_distance.to_bits());
        v.push(h.tracked as u64);
    }
    for r in &e.robot {
        v.push(r.timestamp.to_bits());
        v.extend(r.q.iter().map(|x| x.to_bits()));
        pose(&mut v, &r.ee);
        v.push(r.verdict.code() as u64);
        v.push(r.embodiment.code() as u64);
    }
    for g in &e.gripper {
        v.push(g.timestamp.to_bits());
        v.push(g.state.as_f64().to_bits());
    }
    for f in &e.frames {
        v.push(f.timestamp.to_bits());
    }
    v
}

fn dataset_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut golden = synthetic_episode(104, 10.0);
    golden.base_pose = Pose::from_raw_parts([0.1, -0.0, 1e-310], [-0.5, 0.5, 0.5, 0.5]);
    for k in (0..104).step_by(7) {
        let t = golden.robot[k].timestamp;
        let ego = golden.add_blob(format!("ego frame {k}").into_bytes());
        let ext = golden.add_blob(format!("external frame {k}").into_bytes());
        golden.frames.push(FrameRecord {
            timestamp: t,
            egocentric: Some(ego),
            external: Some(ext),
            mask: None,
        });
    }
    let captured = record(&pickplace(&RecipeParams::default()), &ArmModel::ur3e());
    for e in [&golden, &captured] {
        ensure!(
            e.len() == 104 && (e.duration() - 10.4).abs() < 1e-12,
            "{} is not a 104-sample 10.4 s episode",
            e.episode_id
        );
        let path = write_episode(e, dir.path()).map_err(|err| err.to_string())?;
        let back = read_episode(&path).map_err(|err| err.to_string())?;
        ensure!(back == *e, "{}: fields differ after round trip", e.episode_id);
        ensure!(
            episode_bits(&back) == episode_bits(e),
            "{}: numeric fields not bit-exact",
            e.episode_id
        );
        let manifest = std::fs::read_to_string(path.join("manifest.toml")).map_err(|err| err.to_string())?;
        ensure!(
            manifest.contains("robot = 104"),
            "manifest does not declare 104 samples"
        );
    }
    Ok("synthetic golden and captured pickplace episodes (104 samples, 10.4 s at 10 Hz) bit-exact".into())
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let model = ArmModel::ur3e();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for bundle in [pickplace(&RecipeParams::default()), stack(&RecipeParams::default())] {
        let recorded = record(&bundle, &model);
        let path = write_episode(&recorded, dir.path()).map_err(|e| e.to_string())?;
        let episode = read_episode(&path).map_err(|e| e.to_string())?;
        let report =
            replay_validate(&episode, &bundle.scene, &model, ValidateOptions::default()).map_err(|e| e.to_string())?;
        let summary = summarize(std::slice::from_ref(&report)).map_err(|e| e.to_string())?;
        ensure!(
            summary.success_rate_label() == "100%",
            "{}: SR {}",
            bundle.name,
            summary.success_rate_label()
        );
        for space in [ActionSpace::Joint, ActionSpace::EePose] {
            let mut policy =
                ReplayPolicy::from_episode(&episode, space, episode.sample_rate).map_err(|e| e.to_string())?;
            let cfg = ExecutorConfig {
                schedule: ExecutionSchedule {
                    control_rate: episode.sample_rate,
                    ..Default::default()
                },
                smoothing_window: 1,
                ..Default::default()
            };
            let mut sink = VecSink::default();
            run_policy_loop(&mut policy, &cfg, episode.len() as u64, &mut FeedbackSource, &mut sink)
                .map_err(|e| e.to_string())?;
            let want = episode_actions(&episode, space);
            ensure!(
                bits_equal(&sink.actions, &want),
                "{}: executor replay differs from the recorded stream ({space:?})",
                bundle.name
            );
        }
        lines.push(format!(
            "{} {} samples SR {}",
            bundle.name,
            episode.len(),
            summary.success_rate_label()
        ));
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 60.0, "pipeline took {elapsed:.1} s");
    Ok(format!("{}; {elapsed:.2} s", lines.join(", ")))
}

fn validator_faults() -> Outcome {
    let model = ArmModel::ur3e();
    let bundle = pickplace(&RecipeParams::default());
    let clean = record(&bundle, &model);
    let options = ValidateOptions::default();

    let k = 40;
    let mut teleport = clean.clone();
    teleport.episode_id = "teleport".into();
    teleport.robot[k].q[0] += 1.0;
    let r = replay_validate(&teleport, &bundle.scene, &model, options).map_err(|e| e.to_string())?;
    ensure!(
        r.failure_index == Some(k) && r.failure_reason == Some(VerdictStatus::SpeedLimit),
        "teleport edit gave {:?} at {:?}",
        r.failure_reason,
        r.failure_index
    );

    let caps = placed_capsules(&model.clone().with_base_pose(clean.base_pose), &clean.robot[60].q);
    let forearm = caps.iter().find(|c| c.link == 3).unwrap();
    let mid = (forearm.a + forearm.b) / 2.0;
    let obstacle: Vec<Vector3<f64>> = (-2..=2)
        .map(|i| mid + Vector3::new(0.0, 0.01 * i as f64, 0.0))
        .collect();
    let blocked = bundle.scene.clone().with_points(obstacle).map_err(|e| e.to_string())?;
    let r2 = replay_validate(&clean, &blocked, &model, options).map_err(|e| e.to_string())?;
    let first = r2.first_failure().ok_or("obstacle did not cause a failure")?;
    ensure!(
        first.status == VerdictStatus::EnvCollision,
        "obstacle gave {}",
        first.status
    );
    ensure!(
        first.min_clearance.is_some_and(|c| c < blocked.thresholds.environment),
        "clearance {:?} not below threshold",
        first.min_clearance
    );

    let mut reports = vec![r.clone(), r2.clone()];
    for seed in 0..48 {
        let params = RecipeParams {
            seed,
            randomize: true,
            ..Default::default()
        };
        let b = pickplace(&params);
        let mut e = record(&b, &model);
        e.episode_id = format!("pickplace-{seed:02}");
        reports.push(replay_validate(&e, &b.scene, &model, options).map_err(|e| e.to_string())?);
    }
    let summary = summarize(&reports).map_err(|e| e.to_string())?;
    let table = render_table(&reports, &summary);
    ensure!(
        summary.episode_count == 50 && summary.success_count == 48,
        "{} of {}",
        summary.success_count,
        summary.episode_count
    );
    ensure!(
        table.contains("SR (kinematic) 96%"),
        "table does not report 96%:\n{table}"
    );
    Ok(format!(
        "teleport -> speed_limit at {k}; obstacle -> env_collision at {} ({:.4} m); 48/50 -> SR {}",
        r2.failure_index.unwrap(),
        first.min_clearance.unwrap(),
        summary.success_rate_label()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("ik round-trip", ik_round_trip),
        ("solution-set pose preservation", pose_preservation),
        ("jacobian vs finite differences", jacobian_fd),
        ("collision oracle equivalence", collision_oracle),
        ("capture safety invariant", capture_safety),
        ("freeze/realign behavior", freeze_realign),
        ("chunking", chunking),
        ("ensembling oracle", ensembling),
        ("dataset round-trip", dataset_round_trip),
        ("end-to-end recipes", end_to_end),
        ("validator fault injection", validator_faults),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<32} {why} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
