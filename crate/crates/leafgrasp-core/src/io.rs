//! On-disk formats shared by the CLI, the tests, and the bindings.
//!
//! - depth: binary, little-endian: magic `DPTH`, u32 width, u32 height,
//!   then `width * height` float32 meters, row-major
//! - masks: binary PBM (P4); a set bit marks a leaf pixel
//! - intrinsics / scenes / arms / pose sets / ground truth / results: JSON
//! - metrics, spectra, paths: CSV
//! - clouds + pose axes: PLY with colored vertices and axis edges

use crate::geometry::CameraIntrinsics;
use crate::perception::{BinaryMask, DepthMap, DroppedLeaf, PoseSet, RgbImage};
use crate::scenegen::{GtRecord, Scene};
use crate::workflow::{BatchRun, LpbReport};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("malformed input: {0}")]
    Json(#[from] serde_json::Error),
}

impl FormatError {
    pub fn malformed(msg: impl Into<String>) -> Self {
        Self::Malformed(msg.into())
    }
}

/// Writes a file atomically: to a sibling temp file first, then renamed
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension()
            .map(|e| e.to_string_lossy().into_owned())
            .unwrap_or_default(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Depth files
// ---------------------------------------------------------------------------

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(12 + depth.values().len() * 4);
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&depth.width().to_le_bytes());
    buf.extend_from_slice(&depth.height().to_le_bytes());
    for v in depth.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap, FormatError> {
    let data = fs::read(path)?;
    if data.len() < 12 {
        return Err(FormatError::malformed(format!(
            "{}: truncated depth header",
            path.display()
        )));
    }
    if &data[0..4] != DEPTH_MAGIC {
        return Err(FormatError::malformed(format!(
            "{}: bad depth magic {:?}",
            path.display(),
            &data[0..4]
        )));
    }
    let width = u32::from_le_bytes(data[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(data[8..12].try_into().unwrap());
    let expected = 12 + (width as usize) * (height as usize) * 4;
    if data.len() != expected {
        return Err(FormatError::malformed(format!(
            "{}: {} bytes for a {}x{} depth map (expected {})",
            path.display(),
            data.len(),
            width,
            height,
            expected
        )));
    }
    let values = data[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthMap::new(width, height, values)
        .map_err(|e| FormatError::malformed(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// PBM masks
// ---------------------------------------------------------------------------

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write!(buf, "P4\n{} {}\n", mask.width(), mask.height())?;
    let row_bytes = (mask.width() as usize).div_ceil(8);
    for v in 0..mask.height() {
        let mut row = vec![0u8; row_bytes];
        for u in 0..mask.width() {
            if mask.get(u, v) {
                row[(u / 8) as usize] |= 0x80 >> (u % 8);
            }
        }
        buf.extend_from_slice(&row);
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, FormatError> {
    let data = fs::read(path)?;
    let mut cursor = 0usize;
    let mut token = |data: &[u8]| -> Result<String, FormatError> {
        // Skip whitespace and `#` comment lines between header tokens.
        loop {
            while cursor < data.len() && data[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if cursor < data.len() && data[cursor] == b'#' {
                while cursor < data.len() && data[cursor] != b'\n' {
                    cursor += 1;
                }
                continue;
            }
            break;
        }
        let start = cursor;
        while cursor < data.len() && !data[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(FormatError::malformed(format!(
                "{}: truncated PBM header",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&data[start..cursor]).into_owned())
    };

    let magic = token(&data)?;
    if magic != "P4" {
        return Err(FormatError::malformed(format!(
            "{}: not a binary PBM (magic {magic})",
            path.display()
        )));
    }
    let width: u32 = token(&data)?
        .parse()
        .map_err(|_| FormatError::malformed(format!("{}: bad PBM width", path.display())))?;
    let height: u32 = token(&data)?
        .parse()
        .map_err(|_| FormatError::malformed(format!("{}: bad PBM height", path.display())))?;
    // Exactly one whitespace byte separates the header from the bits.
    cursor += 1;
    let row_bytes = (width as usize).div_ceil(8);
    if data.len() < cursor + row_bytes * height as usize {
        return Err(FormatError::malformed(format!(
            "{}: truncated PBM payload",
            path.display()
        )));
    }
    let mut bits = Vec::with_capacity((width as usize) * (height as usize));
    for v in 0..height as usize {
        let row = &data[cursor + v * row_bytes..cursor + (v + 1) * row_bytes];
        for u in 0..width as usize {
            bits.push(row[u / 8] & (0x80 >> (u % 8)) != 0);
        }
    }
    BinaryMask::new(width, height, bits)
        .map_err(|e| FormatError::malformed(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// PPM (provenance RGB)
// ---------------------------------------------------------------------------

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write!(buf, "P6\n{} {}\n255\n", image.width, image.height)?;
    buf.extend_from_slice(&image.data);
    fs::write(path, buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), FormatError> {
    write_json(path, k)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, FormatError> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()
        .map_err(|e| FormatError::malformed(format!("{}: {e}", path.display())))?;
    Ok(k)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), FormatError> {
    write_json(path, scene)
}

pub fn read_scene(path: &Path) -> Result<Scene, FormatError> {
    read_json(path)
}

pub fn write_gt(path: &Path, gt: &[GtRecord]) -> Result<(), FormatError> {
    write_json(path, &gt)
}

pub fn read_gt(path: &Path) -> Result<Vec<GtRecord>, FormatError> {
    read_json(path)
}

/// Pose sets serialize as a bare JSON array of
/// `{leaf_id, camera_distance, poses: [5 poses]}`.
pub fn write_posesets(path: &Path, posesets: &[PoseSet]) -> Result<(), FormatError> {
    write_json(path, &posesets)
}

pub fn read_posesets(path: &Path) -> Result<Vec<PoseSet>, FormatError> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Results / metrics / spectra
// ---------------------------------------------------------------------------

/// The results document written by a run: the manifest that produced it
/// (seeds included) plus every batch record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ResultsDoc {
    pub manifest: serde_json::Value,
    pub batches: Vec<BatchRun>,
    pub dropped_leaves: Vec<SceneDropLog>,
}

/// Perception drop log for one scene.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneDropLog {
    pub scene_id: u64,
    pub dropped: Vec<DroppedLeaf>,
}

pub fn results_to_json(doc: &ResultsDoc) -> Result<String, FormatError> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    Ok(text)
}

/// One metrics row in the Tables I-III column layout.
pub fn metrics_csv(setting: &str, report: &LpbReport) -> String {
    let mut out = String::from(
        "setting,total_approaches,grasp_rate,lpb1_avail,lpb2_avail,lpb3_avail,lpb1_success,lpb2_success,lpb3_success\n",
    );
    out.push_str(&format!(
        "{setting},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
        report.total_approaches,
        report.grasp_success_rate_pct,
        report.rows[0].availability_pct,
        report.rows[1].availability_pct,
        report.rows[2].availability_pct,
        report.rows[0].success_pct,
        report.rows[1].success_pct,
        report.rows[2].success_pct,
    ));
    out
}

/// One row per grasped leaf: leaf_id first, then per-wavelength
/// transmittance on the sensor grid.
pub fn spectra_csv(batches: &[BatchRun]) -> String {
    let mut header_bands: Option<Vec<f64>> = None;
    let mut rows = Vec::new();
    for batch in batches {
        for rec in &batch.approaches {
            if let Some(spec) = &rec.spectrum {
                if header_bands.is_none() {
                    header_bands = Some(spec.wavelengths.clone());
                }
                let mut row = format!("{}", rec.leaf_id);
                for v in &spec.values {
                    row.push_str(&format!(",{v:.6}"));
                }
                rows.push(row);
            }
        }
    }
    let mut out = String::from("leaf_id");
    if let Some(bands) = header_bands {
        for b in bands {
            out.push_str(&format!(",nm_{b:.0}"));
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// One row per waypoint per executed path: scene, leaf, pose candidate,
/// waypoint index, then the joint angles in radians.
pub fn paths_csv(batches: &[BatchRun], dof: usize) -> String {
    let mut out = String::from("scene_id,leaf_id,pose_index,waypoint");
    for j in 0..dof {
        out.push_str(&format!(",q{j}"));
    }
    out.push('\n');
    for batch in batches {
        for rec in &batch.approaches {
            if let Some(path) = &rec.path {
                for (w, q) in path.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{w}",
                        batch.scene_id, rec.leaf_id, rec.pose_index
                    ));
                    for a in q {
                        out.push_str(&format!(",{a:.9}"));
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// PLY export
// ---------------------------------------------------------------------------

/// Points sampled along each pose axis in the PLY export.
pub const PLY_AXIS_SAMPLES: usize = 8;
/// Rendered axis length in meters.
pub const PLY_AXIS_LENGTH: f64 = 0.03;

/// Colored cloud + pose-axes PLY document.
///
/// Vertices are the filtered cloud points (one flat color per leaf)
/// followed by `PLY_AXIS_SAMPLES` samples per axis per pose (tangent red,
/// bitangent green, normal blue); one edge per axis connects its first and
/// last sample. An empty input still yields a valid header.
pub fn clouds_ply(clouds: &[(usize, Vec<crate::geometry::Vec3>)], posesets: &[PoseSet]) -> String {
    const CLOUD_COLORS: [[u8; 3]; 6] = [
        [46, 139, 60],
        [196, 160, 60],
        [60, 120, 196],
        [170, 80, 170],
        [80, 180, 180],
        [200, 90, 60],
    ];
    let axis_colors = [[255u8, 40, 40], [40, 255, 40], [60, 80, 255]];

    let n_cloud: usize = clouds.iter().map(|(_, pts)| pts.len()).sum();
    let n_axis_vertices: usize = posesets
        .iter()
        .map(|ps| ps.poses.len() * 3 * PLY_AXIS_SAMPLES)
        .sum();
    let n_edges: usize = posesets.iter().map(|ps| ps.poses.len() * 3).sum();

    let mut body = String::new();
    for (leaf_id, points) in clouds {
        let color = CLOUD_COLORS[leaf_id % CLOUD_COLORS.len()];
        for p in points {
            body.push_str(&format!(
                "{:.6} {:.6} {:.6} {} {} {}\n",
                p.x, p.y, p.z, color[0], color[1], color[2]
            ));
        }
    }
    let mut edges = String::new();
    let mut vertex_cursor = n_cloud;
    for ps in posesets {
        for pose in &ps.poses {
            let axes = [
                pose.orientation.rotate(crate::geometry::Vec3::unit_x()),
                pose.orientation.rotate(crate::geometry::Vec3::unit_y()),
                pose.orientation.rotate(crate::geometry::Vec3::unit_z()),
            ];
            for (axis, color) in axes.iter().zip(axis_colors.iter()) {
                for s in 0..PLY_AXIS_SAMPLES {
                    let t = s as f64 / (PLY_AXIS_SAMPLES - 1) as f64;
                    let p = pose.position + *axis * (PLY_AXIS_LENGTH * t);
                    body.push_str(&format!(
                        "{:.6} {:.6} {:.6} {} {} {}\n",
                        p.x, p.y, p.z, color[0], color[1], color[2]
                    ));
                }
                edges.push_str(&format!(
                    "{} {}\n",
                    vertex_cursor,
                    vertex_cursor + PLY_AXIS_SAMPLES - 1
                ));
                vertex_cursor += PLY_AXIS_SAMPLES;
            }
        }
    }

    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", n_cloud + n_axis_vertices));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str(&format!("element edge {n_edges}\n"));
    out.push_str("property int vertex1\nproperty int vertex2\n");
    out.push_str("end_header\n");
    out.push_str(&body);
    out.push_str(&edges);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, UnitQuat, Vec3};
    use tempfile::tempdir;

    #[test]
    fn depth_file_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("depth.dpth");
        let depth = DepthMap::new(3, 2, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]).unwrap();
        write_depth(&path, &depth).unwrap();
        let back = read_depth(&path).unwrap();
        assert_eq!(back, depth);
    }

    #[test]
    fn depth_file_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.dpth");
        std::fs::write(&path, b"JUNKxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            read_depth(&path),
            Err(FormatError::Malformed(_))
        ));
    }

    #[test]
    fn mask_file_roundtrip_non_byte_width() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.pbm");
        // Width 13 exercises row padding.
        let bits: Vec<bool> = (0..13 * 5).map(|i| i % 3 == 0).collect();
        let mask = BinaryMask::new(13, 5, bits).unwrap();
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn mask_reader_accepts_comments() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.pbm");
        let mut data = b"P4\n# generated\n8 1\n".to_vec();
        data.push(0b1010_0001);
        std::fs::write(&path, data).unwrap();
        let mask = read_mask(&path).unwrap();
        assert!(mask.get(0, 0) && mask.get(2, 0) && mask.get(7, 0));
        assert!(!mask.get(1, 0));
    }

    #[test]
    fn posesets_json_is_a_bare_array() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("posesets.json");
        let sets = vec![PoseSet {
            leaf_id: 1,
            camera_distance: 0.5,
            poses: vec![Pose::new(Vec3::new(0.0, 0.0, 0.5), UnitQuat::identity()); 5],
        }];
        write_posesets(&path, &sets).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.trim_start().starts_with('['));
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value[0]["leaf_id"], 1);
        assert!(value[0]["poses"][0]["p"].is_array());
        assert!(value[0]["poses"][0]["q"].is_array());
        let back = read_posesets(&path).unwrap();
        assert_eq!(back, sets);
    }

    #[test]
    fn empty_ply_is_still_valid() {
        let ply = clouds_ply(&[], &[]);
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains("element vertex 0\n"));
        assert!(ply.contains("element edge 0\n"));
        assert!(ply.ends_with("end_header\n"));
    }

    #[test]
    fn ply_vertex_count_is_cloud_plus_axis_samples() {
        let cloud = vec![(0usize, vec![Vec3::new(0.0, 0.0, 0.5); 17])];
        let sets = vec![PoseSet {
            leaf_id: 0,
            camera_distance: 0.5,
            poses: vec![Pose::identity(); 5],
        }];
        let ply = clouds_ply(&cloud, &sets);
        let expected = 17 + 5 * 3 * PLY_AXIS_SAMPLES;
        assert!(ply.contains(&format!("element vertex {expected}\n")));
        assert!(ply.contains(&format!("element edge {}\n", 5 * 3)));
        let vertex_lines = ply
            .lines()
            .skip_while(|l| *l != "end_header")
            .skip(1)
            .take_while(|l| l.split_whitespace().count() == 6)
            .count();
        assert_eq!(vertex_lines, expected);
    }

    #[test]
    fn metrics_csv_layout() {
        let report = LpbReport {
            n_batches: 2,
            total_approaches: 4,
            successful_approaches: 3,
            grasp_success_rate_pct: 75.0,
            rows: [
                crate::workflow::LpbRow {
                    k: 1,
                    qualifying_batches: 2,
                    satisfying_batches: 2,
                    availability_pct: 100.0,
                    success_pct: 100.0,
                },
                crate::workflow::LpbRow {
                    k: 2,
                    qualifying_batches: 1,
                    satisfying_batches: 1,
                    availability_pct: 50.0,
                    success_pct: 100.0,
                },
                crate::workflow::LpbRow {
                    k: 3,
                    qualifying_batches: 0,
                    satisfying_batches: 0,
                    availability_pct: 0.0,
                    success_pct: 0.0,
                },
            ],
        };
        let csv = metrics_csv("lab", &report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "setting,total_approaches,grasp_rate,lpb1_avail,lpb2_avail,lpb3_avail,lpb1_success,lpb2_success,lpb3_success"
        );
        assert_eq!(
            lines.next().unwrap(),
            "lab,4,75.00,100.00,50.00,0.00,100.00,100.00,0.00"
        );
    }
}
