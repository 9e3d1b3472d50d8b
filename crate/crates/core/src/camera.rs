//! Pinhole camera models, Lidar-to-image projection and calibration loaders.
//!
//! A [`CameraModel`] carries a 3×4 projection matrix in pixel units and a 4×4
//! rigid Lidar-to-camera transform. Calibrations are read either from KITTI
//! style text files (`P<k>:` and `Tr:` rows) or from a JSON document holding
//! the matrices and image sizes explicitly.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Minimum camera-frame depth (meters) for a point to project.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Tolerance on `RᵀR = I` for the rotation block of `lidar_to_cam`.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub camera_id: String,
    projection: Matrix3x4<f64>,
    lidar_to_cam: Matrix4<f64>,
    width: u32,
    height: u32,
}

/// Image-plane location of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in meters.
    pub depth: f64,
}

impl Projection {
    /// Integer pixel by floor binning.
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

impl CameraModel {
    pub fn new(
        camera_id: impl Into<String>,
        projection: Matrix3x4<f64>,
        lidar_to_cam: Matrix4<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let camera_id = camera_id.into();
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "camera {camera_id}: image size {width}x{height} must be positive"
            )));
        }
        if projection.iter().chain(lidar_to_cam.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("camera {camera_id}: non-finite matrix entry")));
        }
        let dev = orthonormal_deviation(&lidar_to_cam.fixed_view::<3, 3>(0, 0).into_owned());
        if dev > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "camera {camera_id}: rotation block deviates from orthonormal by {dev:.3e}"
            )));
        }
        Ok(Self {
            camera_id,
            projection,
            lidar_to_cam,
            width,
            height,
        })
    }

    /// Pinhole camera with identity extrinsics: focal length `f` in pixels and
    /// principal point `(cx, cy)`.
    pub fn pinhole(camera_id: impl Into<String>, f: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let projection = Matrix3x4::new(f, 0.0, cx, 0.0, 0.0, f, cy, 0.0, 0.0, 0.0, 1.0, 0.0);
        Self::new(camera_id, projection, Matrix4::identity(), width, height)
    }

    pub fn with_extrinsics(mut self, lidar_to_cam: Matrix4<f64>) -> Result<Self> {
        self.lidar_to_cam = lidar_to_cam;
        Self::new(self.camera_id, self.projection, self.lidar_to_cam, self.width, self.height)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn lidar_to_cam(&self) -> &Matrix4<f64> {
        &self.lidar_to_cam
    }

    /// Projects one Lidar-frame point. `None` when behind the camera or outside the image.
    pub fn project(&self, xyz: [f64; 3]) -> Option<Projection> {
        let cam = self.lidar_to_cam * Vector4::new(xyz[0], xyz[1], xyz[2], 1.0);
        let depth = cam.z;
        if depth <= DEPTH_EPSILON {
            return None;
        }
        let img = self.projection * cam;
        if img.z <= DEPTH_EPSILON {
            return None;
        }
        let u = img.x / img.z;
        let v = img.y / img.z;
        let (fu, fv) = (u.floor(), v.floor());
        if fu < 0.0 || fv < 0.0 || fu >= self.width as f64 || fv >= self.height as f64 {
            return None;
        }
        Some(Projection { u, v, depth })
    }

    /// Row-major pixel index of a projection, the index space of mask runs.
    pub fn pixel_index(&self, p: &Projection) -> u32 {
        let (u, v) = p.pixel();
        v * self.width + u
    }
}

/// Projects every point of `cloud`; out-of-view points yield `None`.
pub fn project_points(cloud: &PointCloud, cam: &CameraModel) -> Vec<Option<Projection>> {
    cloud.points().iter().map(|p| cam.project(p.xyz())).collect()
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let d = r.transpose() * r - Matrix3::identity();
    let det = r.determinant();
    d.amax().max(if det > 0.0 { 0.0 } else { f64::INFINITY })
}

/// Projects a 3×3 matrix onto the nearest rotation (SVD polar factor).
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Rotation blocks printed with a few significant digits (as in KITTI calib
/// files) miss the 1e-6 tolerance; within this looser bound they are snapped
/// to the nearest rotation on load.
const CALIB_SNAP_TOL: f64 = 1e-3;

fn parse_floats(line_no: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("calib line {line_no}: {e}")))?;
    if values.len() != expected {
        return Err(Error::invalid(format!(
            "calib line {line_no}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn rigid_from_rows(values: &[f64]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            m[(r, c)] = values[r * 4 + c];
        }
    }
    m
}

fn snap_rotation(m: &mut Matrix4<f64>) -> Result<()> {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let dev = orthonormal_deviation(&r);
    if dev > ORTHONORMAL_TOL {
        if dev > CALIB_SNAP_TOL {
            return Err(Error::invalid(format!(
                "Tr rotation deviates from orthonormal by {dev:.3e}"
            )));
        }
        log::debug!("snapping Tr rotation (deviation {dev:.3e}) to nearest rotation");
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&nearest_rotation(&r));
    }
    Ok(())
}

/// Parses a KITTI style calibration (`P0:`..`Pk:` projection rows and a
/// `Tr:` / `Tr_velo_to_cam:` Lidar-to-camera row, optionally `R0_rect:`).
/// Camera `P<k>` becomes camera id `image_<k>`. KITTI calib files carry no
/// image size, so it is passed in.
pub fn parse_kitti_calib(text: &str, width: u32, height: u32) -> Result<Vec<CameraModel>> {
    let mut projections: Vec<(u32, Matrix3x4<f64>)> = Vec::new();
    let mut tr: Option<Matrix4<f64>> = None;
    let mut rect: Option<Matrix3<f64>> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(Error::invalid(format!("calib line {}: missing `key:`", line_no + 1)));
        };
        let key = key.trim();
        if let Some(k) = key.strip_prefix('P').and_then(|k| k.parse::<u32>().ok()) {
            let v = parse_floats(line_no + 1, rest, 12)?;
            projections.push((k, Matrix3x4::from_row_slice(&v)));
        } else if key == "P_rect" || key.starts_with("P_rect_") {
            let k = key.trim_start_matches("P_rect").trim_start_matches('_').parse().unwrap_or(0);
            let v = parse_floats(line_no + 1, rest, 12)?;
            projections.push((k, Matrix3x4::from_row_slice(&v)));
        } else if key == "Tr" || key == "Tr_velo_to_cam" {
            tr = Some(rigid_from_rows(&parse_floats(line_no + 1, rest, 12)?));
        } else if key == "R0_rect" || key == "R_rect" {
            rect = Some(Matrix3::from_row_slice(&parse_floats(line_no + 1, rest, 9)?));
        }
    }
    let mut tr = tr.ok_or_else(|| Error::invalid("calib has no `Tr:` row"))?;
    if let Some(r) = rect {
        let mut r4 = Matrix4::identity();
        r4.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        tr = r4 * tr;
    }
    snap_rotation(&mut tr)?;
    if projections.is_empty() {
        return Err(Error::invalid("calib has no `P<k>:` rows"));
    }
    projections.sort_by_key(|(k, _)| *k);
    projections
        .into_iter()
        .map(|(k, p)| CameraModel::new(format!("image_{k}"), p, tr, width, height))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraJson {
    camera_id: String,
    projection: [[f64; 4]; 3],
    lidar_to_cam: [[f64; 4]; 4],
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibJson {
    cameras: Vec<CameraJson>,
}

/// Parses the JSON calibration: `{"cameras": [{"camera_id", "projection"
/// (3 rows of 4), "lidar_to_cam" (4 rows of 4), "width", "height"}]}`.
pub fn parse_json_calib(text: &str) -> Result<Vec<CameraModel>> {
    let doc: CalibJson = serde_json::from_str(text)?;
    doc.cameras
        .into_iter()
        .map(|c| {
            let p = Matrix3x4::from_fn(|r, k| c.projection[r][k]);
            let t = Matrix4::from_fn(|r, k| c.lidar_to_cam[r][k]);
            CameraModel::new(c.camera_id, p, t, c.width, c.height)
        })
        .collect()
}

pub fn calib_to_json(cameras: &[CameraModel]) -> Result<String> {
    let doc = CalibJson {
        cameras: cameras
            .iter()
            .map(|c| CameraJson {
                camera_id: c.camera_id.clone(),
                projection: std::array::from_fn(|r| std::array::from_fn(|k| c.projection[(r, k)])),
                lidar_to_cam: std::array::from_fn(|r| std::array::from_fn(|k| c.lidar_to_cam[(r, k)])),
                width: c.width,
                height: c.height,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Loads a calibration file. `.json` files use the JSON layout; anything else
/// is parsed as KITTI text and requires `image_size`.
pub fn load_calibration(path: impl AsRef<Path>, image_size: Option<(u32, u32)>) -> Result<Vec<CameraModel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        parse_json_calib(&text)
    } else {
        let (w, h) = image_size.ok_or_else(|| {
            Error::Config(format!("{}: KITTI calibration needs an image size", path.display()))
        })?;
        parse_kitti_calib(&text, w, h)
    }
}
