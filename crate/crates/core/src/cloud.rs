//! Lidar scans in the SemanticKITTI `.bin` layout: four little-endian `f32`
//! values (x, y, z, intensity) per point, no header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Bytes per point record on disk.
pub const POINT_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// One Lidar scan. Point order is the index space for every mask, segment and
/// label over this scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub scan_id: String,
    points: Vec<Point>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(scan_id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} has a non-finite value")));
        }
        Ok(Self {
            scan_id: scan_id.into(),
            points,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Sub-cloud made of `indices`, in the given order.
    pub fn select(&self, indices: &[u32]) -> PointCloud {
        PointCloud {
            scan_id: self.scan_id.clone(),
            points: indices.iter().map(|&i| self.points[i as usize]).collect(),
        }
    }

    pub fn from_bytes(scan_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % POINT_STRIDE != 0 {
            let offset = (bytes.len() - bytes.len() % POINT_STRIDE) as u64;
            return Err(Error::Format {
                offset,
                message: format!(
                    "truncated point record: {} bytes is not a multiple of {POINT_STRIDE}",
                    bytes.len()
                ),
            });
        }
        let mut points = Vec::with_capacity(bytes.len() / POINT_STRIDE);
        for (i, rec) in bytes.chunks_exact(POINT_STRIDE).enumerate() {
            let mut v = [0f32; 4];
            for (k, field) in rec.chunks_exact(4).enumerate() {
                let value = f32::from_le_bytes(field.try_into().expect("4-byte chunk"));
                if !value.is_finite() {
                    return Err(Error::Format {
                        offset: (i * POINT_STRIDE + k * 4) as u64,
                        message: format!("non-finite value {value} in point {i}"),
                    });
                }
                v[k] = value;
            }
            points.push(Point::new(v[0], v[1], v[2], v[3]));
        }
        Ok(Self {
            scan_id: scan_id.into(),
            points,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * POINT_STRIDE);
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.intensity] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Reads a `.bin` scan. The scan id is the file stem.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let scan_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PointCloud::from_bytes(scan_id, &bytes)
}

pub fn write_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cloud.to_bytes()).map_err(|e| Error::io(path, e))
}
