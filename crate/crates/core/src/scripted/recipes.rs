use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Detour, ScriptedTrajectory, Waypoint};
use crate::geometry::Pose;
use crate::workspace::{Aabb, EnvironmentCloud, Scene, Thresholds};

const OPEN: f64 = 0.08;
const CLOSED: f64 = 0.0;
const HOVER: f64 = 0.22;
const GRASP: f64 = 0.10;
const PLACE: f64 = 0.12;
const TABLE_SPACING: f64 = 0.02;

/// Tool z pointing at the table (world -y), tool x along world -z.
pub fn gripper_down() -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(0.5, 0.5, 0.5, -0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecipeParams {
    pub seed: u64,
    /// Draw object positions uniformly inside their ROIs instead of at the centers.
    pub randomize: bool,
    /// Half side of each square ROI, meters.
    pub roi_half_extent: f64,
    pub noise: Option<[f64; 3]>,
}

impl Default for RecipeParams {
    fn default() -> Self {
        Self {
            seed: 0,
            randomize: false,
            roi_half_extent: 0.03,
            noise: None,
        }
    }
}

/// A scene plus the hand script that performs one task in it.
#[derive(Debug, Clone)]
pub struct TaskBundle {
    pub name: String,
    pub scene: Scene,
    pub trajectory: ScriptedTrajectory,
    /// Regions objects start in, then the regions they end in.
    pub pick_rois: Vec<Aabb>,
    pub place_rois: Vec<Aabb>,
    pub detour: Option<Detour>,
}

/// Flat grid of table-top points at world height 0.
pub fn tabletop_cloud(x: [f64; 2], z: [f64; 2], spacing: f64) -> Vec<Vector3<f64>> {
    let nx = ((x[1] - x[0]) / spacing).round() as usize;
    let nz = ((z[1] - z[0]) / spacing).round() as usize;
    (0..=nx)
        .flat_map(|i| (0..=nz).map(move |k| Vector3::new(x[0] + i as f64 * spacing, 0.0, z[0] + k as f64 * spacing)))
        .collect()
}

fn table_scene(id: &str) -> Scene {
    let cloud = EnvironmentCloud::new(tabletop_cloud([-0.6, 0.2], [-0.46, 0.46], TABLE_SPACING), id)
        .expect("finite table points");
    Scene::new(id, cloud, Thresholds::default(), Vec::new())
}

fn roi(center: [f64; 2], half: f64) -> Aabb {
    Aabb {
        min: [center[0] - half, 0.0, center[1] - half],
        max: [center[0] + half, 0.15, center[1] + half],
    }
}

fn draw(rng: &mut ChaCha8Rng, center: [f64; 2], params: &RecipeParams) -> [f64; 2] {
    if !params.randomize {
        return center;
    }
    let h = params.roi_half_extent;
    [
        center[0] + rng.random_range(-h..=h),
        center[1] + rng.random_range(-h..=h),
    ]
}

fn at(xz: [f64; 2], height: f64) -> Pose {
    Pose::new(Vector3::new(xz[0], height, xz[1]), gripper_down())
}

struct Script {
    waypoints: Vec<Waypoint>,
}

impl Script {
    fn start(pose: Pose) -> Self {
        Self {
            waypoints: vec![Waypoint {
                time: 0.0,
                pose,
                pinch: OPEN,
            }],
        }
    }

    fn last(&self) -> Waypoint {
        self.waypoints[self.waypoints.len() - 1]
    }

    fn to(&mut self, dt: f64, pose: Pose, pinch: f64) -> &mut Self {
        let t = self.last().time + dt;
        self.waypoints.push(Waypoint { time: t, pose, pinch });
        self
    }

    fn hold(&mut self, dt: f64, pinch: f64) -> &mut Self {
        let pose = self.last().pose;
        self.to(dt, pose, pinch)
    }

    /// Approach, pinch-close, lift, transport at `carry`, lower, pinch-open, lift.
    fn pick_place(&mut self, from: [f64; 2], to: [f64; 2], place_height: f64, carry: f64) -> &mut Self {
        if self.last().pose.position_error(&at(from, HOVER)) > 1e-12 {
            self.to(2.0, at(from, HOVER), OPEN);
        }
        self.to(1.6, at(from, GRASP), OPEN)
            .hold(0.6, CLOSED)
            .hold(0.4, CLOSED)
            .to(1.4, at(from, carry), CLOSED)
            .to(2.8, at(to, carry), CLOSED)
            .to(1.2, at(to, place_height), CLOSED)
            .hold(0.4, OPEN)
            .hold(0.4, OPEN)
    }

    fn finish(&mut self, dt: f64, pose: Pose) -> Vec<Waypoint> {
        self.to(dt, pose, OPEN);
        std::mem::take(&mut self.waypoints)
    }
}

const PICK: [f64; 2] = [-0.35, -0.12];
const DROP: [f64; 2] = [-0.35, 0.20];

/// Pick a tall block from the left ROI and place it in the right ROI.
/// 10.3 s of motion, so a 10 Hz recording holds 104 samples.
pub fn pickplace(params: &RecipeParams) -> TaskBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let from = draw(&mut rng, PICK, params);
    let to = draw(&mut rng, DROP, params);
    let mut s = Script::start(at(from, HOVER));
    s.pick_place(from, to, PLACE, HOVER);
    let waypoints = s.finish(1.5, at(to, HOVER));
    TaskBundle {
        name: "pickplace".into(),
        scene: table_scene("pickplace"),
        trajectory: trajectory(waypoints, params),
        pick_rois: vec![roi(PICK, params.roi_half_extent)],
        place_rois: vec![roi(DROP, params.roi_half_extent)],
        detour: None,
    }
}

/// Nest three bowls: bring the first to the target ROI, then drop the other
/// two into it.
pub fn stack(params: &RecipeParams) -> TaskBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = [[-0.42, -0.16], [-0.26, -0.22], [-0.44, 0.24]];
    let target_center = [-0.30, 0.06];
    let bowls: Vec<[f64; 2]> = centers.iter().map(|c| draw(&mut rng, *c, params)).collect();
    let target = draw(&mut rng, target_center, params);
    let mut s = Script::start(at(bowls[0], HOVER));
    for (i, b) in bowls.iter().enumerate() {
        s.pick_place(*b, target, PLACE + 0.015 * i as f64, HOVER);
    }
    let waypoints = s.finish(1.0, at(target, HOVER));
    TaskBundle {
        name: "stack".into(),
        scene: table_scene("stack"),
        trajectory: trajectory(waypoints, params),
        pick_rois: centers.iter().map(|c| roi(*c, params.roi_half_extent)).collect(),
        place_rois: vec![roi(target_center, params.roi_half_extent)],
        detour: None,
    }
}

/// Pick-place with a low wall across the transport path. The scripted carry
/// height runs into the wall, so capture freezes and the runner detours over it.
pub fn pickplace_with_obstacle(params: &RecipeParams) -> TaskBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let from = draw(&mut rng, PICK, params);
    let to = draw(&mut rng, DROP, params);
    let carry = 0.12;
    let mut s = Script::start(at(from, HOVER));
    s.pick_place(from, to, PLACE, carry);
    let waypoints = s.finish(1.5, at(to, HOVER));

    let mut wall = Vec::new();
    let (x0, x1, top) = (-0.56, -0.14, 0.18);
    let n = ((x1 - x0) / 0.01f64).round() as usize;
    for i in 0..=n {
        for j in 1..=18 {
            wall.push(Vector3::new(x0 + i as f64 * 0.01, j as f64 * top / 18.0, 0.04));
        }
    }
    let scene = table_scene("pickplace-wall")
        .with_points(wall)
        .expect("finite wall points");
    TaskBundle {
        name: "pickplace-wall".into(),
        scene,
        trajectory: trajectory(waypoints, params),
        pick_rois: vec![roi(PICK, params.roi_half_extent)],
        place_rois: vec![roi(DROP, params.roi_half_extent)],
        detour: Some(Detour {
            height: 0.32,
            ..Detour::default()
        }),
    }
}

fn trajectory(waypoints: Vec<Waypoint>, params: &RecipeParams) -> ScriptedTrajectory {
    ScriptedTrajectory {
        waypoints,
        noise: params.noise,
        seed: params.seed,
        commands: Vec::new(),
    }
}

/// The clean-scene tasks: pickplace and stack.
pub fn task_recipes(params: &RecipeParams) -> Vec<TaskBundle> {
    vec![pickplace(params), stack(params)]
}
