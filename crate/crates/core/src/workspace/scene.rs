use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::cloud::{EnvironmentCloud, DEFAULT_VOXEL_SIZE};
use super::WorkspaceError;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Clearance thresholds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum robot-to-environment clearance.
    pub environment: f64,
    /// Minimum distance between non-adjacent link capsules.
    #[serde(rename = "self")]
    pub self_clearance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            environment: 0.005,
            self_clearance: 0.0,
        }
    }
}

/// Axis-aligned world box whose points are ignored by clearance checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] && p[d] <= self.max[d])
    }
}

/// Environment cloud plus the checking parameters that go with it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub cloud: EnvironmentCloud,
    pub thresholds: Thresholds,
    pub exemptions: Vec<Aabb>,
    pub voxel_size: f64,
}

impl Scene {
    /// Drops points inside exemption boxes and builds the voxel index.
    pub fn new(
        id: impl Into<String>,
        mut cloud: EnvironmentCloud,
        thresholds: Thresholds,
        exemptions: Vec<Aabb>,
    ) -> Self {
        cloud.retain(|p| !exemptions.iter().any(|b| b.contains(p)));
        Self {
            id: id.into(),
            cloud: cloud.with_index(DEFAULT_VOXEL_SIZE),
            thresholds,
            exemptions,
            voxel_size: DEFAULT_VOXEL_SIZE,
        }
    }

    pub fn empty(id: impl Into<String>) -> Self {
        let id = id.into();
        Self::new(
            id.clone(),
            EnvironmentCloud::empty(id),
            Thresholds::default(),
            Vec::new(),
        )
    }

    pub fn with_voxel_size(mut self, size: f64) -> Self {
        self.voxel_size = size;
        self.cloud = self.cloud.with_index(size);
        self
    }

    /// Adds obstacle points (exemption boxes still apply).
    pub fn with_points(mut self, points: impl IntoIterator<Item = Vector3<f64>>) -> Result<Self, WorkspaceError> {
        let exemptions = self.exemptions.clone();
        self.cloud
            .extend(points.into_iter().filter(|p| !exemptions.iter().any(|b| b.contains(p))))?;
        Ok(self)
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self, WorkspaceError> {
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest)?;
        let file: SceneFile = toml::from_str(&text).map_err(|e| WorkspaceError::Format(e.to_string()))?;
        if file.format_version != SCENE_FORMAT_VERSION {
            return Err(WorkspaceError::FormatVersion {
                found: file.format_version,
                expected: SCENE_FORMAT_VERSION,
            });
        }
        let cloud = match &file.cloud {
            Some(rel) => {
                let base = manifest.parent().unwrap_or(Path::new("."));
                EnvironmentCloud::load(base.join(rel))?
            }
            None => EnvironmentCloud::empty(file.id.clone()),
        };
        let scene = Scene::new(file.id, cloud, file.clearance, file.exemptions);
        Ok(match file.voxel_size {
            Some(v) if v > 0.0 => scene.with_voxel_size(v),
            Some(_) => return Err(WorkspaceError::Format("voxel_size must be positive".into())),
            None => scene,
        })
    }

    /// Writes `<dir>/<id>.toml` and `<dir>/<id>.ply`; returns the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, WorkspaceError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let cloud_name = format!("{}.ply", self.id);
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(&cloud_name))?);
        self.cloud.write_ply(&mut out)?;
        std::io::Write::flush(&mut out)?;
        let file = SceneFile {
            format_version: SCENE_FORMAT_VERSION,
            id: self.id.clone(),
            cloud: Some(cloud_name),
            voxel_size: Some(self.voxel_size),
            clearance: self.thresholds,
            exemptions: self.exemptions.clone(),
        };
        let manifest = dir.join(format!("{}.toml", self.id));
        let text = toml::to_string_pretty(&file).map_err(|e| WorkspaceError::Format(e.to_string()))?;
        std::fs::write(&manifest, text)?;
        Ok(manifest)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    format_version: u32,
    id: String,
    cloud: Option<String>,
    voxel_size: Option<f64>,
    #[serde(default)]
    clearance: Thresholds,
    #[serde(default)]
    exemptions: Vec<Aabb>,
}
