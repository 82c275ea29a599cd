use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::WorkspaceError;
use crate::geometry::point_segment_distance;

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.05;

// Slack on the ring lower bound so rounding in the bound never prunes a cell
// holding the true minimum.
const PRUNE_MARGIN: f64 = 1e-9;

/// Static environment point cloud in the world frame.
#[derive(Debug, Clone)]
pub struct EnvironmentCloud {
    points: Vec<Vector3<f64>>,
    index: Option<VoxelGrid>,
    pub source_id: String,
}

impl EnvironmentCloud {
    pub fn new(points: Vec<Vector3<f64>>, source_id: impl Into<String>) -> Result<Self, WorkspaceError> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(WorkspaceError::NonFinitePoint(i));
        }
        Ok(Self {
            points,
            index: None,
            source_id: source_id.into(),
        })
    }

    pub fn empty(source_id: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            index: None,
            source_id: source_id.into(),
        }
    }

    /// Builds the uniform voxel index used by [`EnvironmentCloud::nearest_to_segment`].
    pub fn with_index(mut self, voxel_size: f64) -> Self {
        self.index = Some(VoxelGrid::build(&self.points, voxel_size));
        self
    }

    pub fn without_index(mut self) -> Self {
        self.index = None;
        self
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps only points for which `keep` returns true; drops the index.
    pub fn retain(&mut self, mut keep: impl FnMut(&Vector3<f64>) -> bool) {
        self.points.retain(|p| keep(p));
        self.index = None;
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Vector3<f64>>) -> Result<(), WorkspaceError> {
        let start = self.points.len();
        self.points.extend(more);
        if let Some(i) = self.points[start..]
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            self.points.truncate(start);
            return Err(WorkspaceError::NonFinitePoint(start + i));
        }
        if let Some(grid) = &self.index {
            let size = grid.cell;
            self.index = Some(VoxelGrid::build(&self.points, size));
        }
        Ok(())
    }

    /// Smallest point-to-segment distance, using the voxel index when built.
    /// Returns `None` for an empty cloud.
    pub fn nearest_to_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<f64> {
        match &self.index {
            Some(grid) => grid.nearest_to_segment(&self.points, a, b),
            None => self.nearest_to_segment_brute_force(a, b),
        }
    }

    pub fn nearest_to_segment_brute_force(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<f64> {
        self.points
            .iter()
            .map(|p| point_segment_distance(p, a, b))
            .min_by(f64::total_cmp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkspaceError> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = std::fs::File::open(path)?;
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let points = match ext.as_str() {
            "ply" => read_ascii_ply(file)?,
            "csv" | "txt" | "xyz" => read_csv(file)?,
            other => return Err(WorkspaceError::Format(format!("unknown cloud extension `{other}`"))),
        };
        Self::new(points, id)
    }

    pub fn write_ply(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", self.points.len())?;
        writeln!(out, "property float x")?;
        writeln!(out, "property float y")?;
        writeln!(out, "property float z")?;
        writeln!(out, "end_header")?;
        for p in &self.points {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

fn parse_xyz(fields: &[&str], line_no: usize) -> Result<Vector3<f64>, WorkspaceError> {
    if fields.len() < 3 {
        return Err(WorkspaceError::Format(format!(
            "line {line_no}: expected x y z, found {} fields",
            fields.len()
        )));
    }
    let mut v = [0.0; 3];
    for (k, f) in fields.iter().take(3).enumerate() {
        v[k] = f
            .trim()
            .parse::<f64>()
            .map_err(|e| WorkspaceError::Format(format!("line {line_no}: {e}")))?;
    }
    Ok(Vector3::from(v))
}

/// `x,y,z` per line; blank lines and `#` comments are skipped, as is a
/// non-numeric header line.
pub fn read_csv(input: impl Read) -> Result<Vec<Vector3<f64>>, WorkspaceError> {
    let mut points = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if n == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        points.push(parse_xyz(&fields, n + 1)?);
    }
    Ok(points)
}

/// ASCII PLY with a vertex element whose first three properties are x, y, z.
pub fn read_ascii_ply(input: impl Read) -> Result<Vec<Vector3<f64>>, WorkspaceError> {
    let mut lines = BufReader::new(input).lines();
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    let mut header_ok = false;
    let mut line_no = 0;
    for line in lines.by_ref() {
        let line = line?;
        line_no += 1;
        let t = line.trim();
        if line_no == 1 {
            if t != "ply" {
                return Err(WorkspaceError::Format("missing `ply` magic".into()));
            }
            continue;
        }
        let mut parts = t.split_whitespace();
        match parts.next() {
            Some("format") => {
                if parts.next() != Some("ascii") {
                    return Err(WorkspaceError::Format("only ascii PLY is supported".into()));
                }
            }
            Some("element") => {
                in_vertex = parts.next() == Some("vertex");
                if in_vertex {
                    let n = parts
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| WorkspaceError::Format("bad vertex count".into()))?;
                    vertex_count = Some(n);
                }
            }
            Some("property") if in_vertex => {
                props.push(parts.last().unwrap_or("").to_string());
            }
            Some("end_header") => {
                header_ok = true;
                break;
            }
            _ => {}
        }
    }
    if !header_ok {
        return Err(WorkspaceError::Format("PLY header not terminated".into()));
    }
    if props.len() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z" {
        return Err(WorkspaceError::Format("vertex properties must start with x y z".into()));
    }
    let count = vertex_count.ok_or_else(|| WorkspaceError::Format("no vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    for line in lines {
        if points.len() == count {
            break;
        }
        let line = line?;
        line_no += 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        points.push(parse_xyz(&fields, line_no)?);
    }
    if points.len() != count {
        return Err(WorkspaceError::Format(format!(
            "PLY declares {count} vertices but contains {}",
            points.len()
        )));
    }
    Ok(points)
}

type CellKey = [i32; 3];

#[derive(Debug, Clone)]
struct VoxelGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<u32>>,
    lo: CellKey,
    hi: CellKey,
}

impl VoxelGrid {
    fn key(&self, p: &Vector3<f64>) -> CellKey {
        key_for(p, self.cell)
    }

    fn build(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel size must be positive");
        let mut cells: HashMap<CellKey, Vec<u32>> = HashMap::new();
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key_for(p, cell);
            for d in 0..3 {
                lo[d] = lo[d].min(k[d]);
                hi[d] = hi[d].max(k[d]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        Self { cell, cells, lo, hi }
    }

    /// Exact nearest point-to-segment distance by expanding cubic shells of
    /// cells around the segment's bounding box.
    fn nearest_to_segment(&self, points: &[Vector3<f64>], a: &Vector3<f64>, b: &Vector3<f64>) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        let ka = self.key(a);
        let kb = self.key(b);
        let blo: CellKey = std::array::from_fn(|d| ka[d].min(kb[d]));
        let bhi: CellKey = std::array::from_fn(|d| ka[d].max(kb[d]));
        let mut best = f64::INFINITY;
        let mut k: i64 = 0;
        loop {
            // Cells in shell k are separated from the box by at least k - 1 whole cells.
            if k >= 1 && (k - 1) as f64 * self.cell > best + PRUNE_MARGIN {
                break;
            }
            let slo: [i64; 3] = std::array::from_fn(|d| blo[d] as i64 - k);
            let shi: [i64; 3] = std::array::from_fn(|d| bhi[d] as i64 + k);
            let covers_grid = (0..3).all(|d| slo[d] <= self.lo[d] as i64 && shi[d] >= self.hi[d] as i64);
            self.visit_shell(slo, shi, k == 0, |idx| {
                for &i in idx {
                    let d = point_segment_distance(&points[i as usize], a, b);
                    if d < best {
                        best = d;
                    }
                }
            });
            if covers_grid {
                break;
            }
            k += 1;
        }
        Some(best)
    }

    /// Visits the cells on the surface of the box `slo..=shi`, or all of
    /// them when `solid`.
    fn visit_shell(&self, slo: [i64; 3], shi: [i64; 3], solid: bool, mut f: impl FnMut(&[u32])) {
        // Clip the iteration to occupied bounds; cells outside are empty.
        let clo: [i64; 3] = std::array::from_fn(|d| slo[d].max(self.lo[d] as i64));
        let chi: [i64; 3] = std::array::from_fn(|d| shi[d].min(self.hi[d] as i64));
        if (0..3).any(|d| clo[d] > chi[d]) {
            return;
        }
        for x in clo[0]..=chi[0] {
            let x_edge = x == slo[0] || x == shi[0];
            for y in clo[1]..=chi[1] {
                let y_edge = y == slo[1] || y == shi[1];
                if solid || x_edge || y_edge {
                    for z in clo[2]..=chi[2] {
                        if let Some(idx) = self.cells.get(&[x as i32, y as i32, z as i32]) {
                            f(idx);
                        }
                    }
                } else {
                    for z in [slo[2], shi[2]] {
                        if z < clo[2] || z > chi[2] || (z == shi[2] && shi[2] == slo[2]) {
                            continue;
                        }
                        if let Some(idx) = self.cells.get(&[x as i32, y as i32, z as i32]) {
                            f(idx);
                        }
                    }
                }
            }
        }
    }
}

fn key_for(p: &Vector3<f64>, cell: f64) -> CellKey {
    std::array::from_fn(|d| {
        (p[d] / cell)
            .floor()
            .clamp(i32::MIN as f64 / 2.0, i32::MAX as f64 / 2.0) as i32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_finite() {
        let err = EnvironmentCloud::new(vec![Vector3::zeros(), Vector3::new(f64::NAN, 0.0, 0.0)], "x");
        assert!(matches!(err, Err(WorkspaceError::NonFinitePoint(1))));
        let err = read_csv("1,2,inf\n".as_bytes()).map(|p| EnvironmentCloud::new(p, "x"));
        assert!(matches!(err, Ok(Err(WorkspaceError::NonFinitePoint(0)))));
    }

    #[test]
    fn parses_ply_and_csv() {
        let ply = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let pts = read_ascii_ply(ply.as_bytes()).unwrap();
        assert_eq!(pts[1], Vector3::new(1.0, 2.0, 3.0));
        let csv = "x,y,z\n# comment\n0.5,0.25,1\n";
        assert_eq!(read_csv(csv.as_bytes()).unwrap(), vec![Vector3::new(0.5, 0.25, 1.0)]);
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(read_ascii_ply(short.as_bytes()).is_err());
    }

    #[test]
    fn ply_write_read_round_trip() {
        let cloud =
            EnvironmentCloud::new(vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1e-3, 2.5, -7.0)], "c").unwrap();
        let mut buf = Vec::new();
        cloud.write_ply(&mut buf).unwrap();
        assert_eq!(read_ascii_ply(buf.as_slice()).unwrap(), cloud.points());
    }

    #[test]
    fn voxel_search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..3000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..0.5),
                )
            })
            .collect();
        let brute = EnvironmentCloud::new(pts, "r").unwrap();
        let indexed = brute.clone().with_index(0.07);
        for _ in 0..200 {
            let a = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..2.0),
            );
            let b = a + Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            assert_eq!(indexed.nearest_to_segment(&a, &b), brute.nearest_to_segment(&a, &b));
        }
    }
}
