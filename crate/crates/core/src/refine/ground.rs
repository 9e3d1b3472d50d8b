use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;

/// RANSAC ground-plane parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundParams {
    /// Max point-to-plane distance of a ground inlier (meters).
    pub inlier_dist: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Max angle between the plane normal and +z.
    pub max_tilt_deg: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            inlier_dist: 0.2,
            max_iters: 200,
            seed: 0,
            max_tilt_deg: 30.0,
        }
    }
}

/// Flags ground points with a seeded RANSAC plane fit.
///
/// Candidate planes get an upward normal and must pass at or below the sensor
/// origin and within `max_tilt_deg` of horizontal. The plane with the most
/// inliers wins (first found on ties); its inliers are the ground. Fewer than
/// three points, or no valid candidate (e.g. all points collinear), yields no
/// ground.
pub fn remove_ground(cloud: &PointCloud, params: &GroundParams) -> Vec<bool> {
    let n = cloud.len();
    let mut ground = vec![false; n];
    if n < 3 {
        return ground;
    }
    let pts: Vec<Vector3<f64>> = cloud.points().iter().map(|p| Vector3::from(p.xyz())).collect();
    let min_nz = params.max_tilt_deg.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for _ in 0..params.max_iters {
        let idx = rand::seq::index::sample(&mut rng, n, 3);
        let (a, b, c) = (pts[idx.index(0)], pts[idx.index(1)], pts[idx.index(2)]);
        let mut normal = (b - a).cross(&(c - a));
        let len = normal.norm();
        if len < 1e-12 {
            continue;
        }
        normal /= len;
        if normal.z < 0.0 {
            normal = -normal;
        }
        if normal.z < min_nz {
            continue;
        }
        let d = -normal.dot(&a);
        // signed height of the origin above the plane
        if d < 0.0 {
            continue;
        }
        let count = pts
            .iter()
            .filter(|p| (normal.dot(p) + d).abs() <= params.inlier_dist)
            .count();
        if best.map_or(true, |(_, _, c)| count > c) {
            best = Some((normal, d, count));
        }
    }

    match best {
        Some((normal, d, _)) => {
            for (g, p) in ground.iter_mut().zip(&pts) {
                *g = (normal.dot(p) + d).abs() <= params.inlier_dist;
            }
        }
        None => log::warn!(
            "scan {}: no valid ground plane among {} points",
            cloud.scan_id,
            n
        ),
    }
    ground
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;

    fn cloud(points: Vec<[f32; 3]>) -> PointCloud {
        PointCloud::new("g", points.into_iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect()).unwrap()
    }

    fn plane_plus_box() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f32 - 4.5, j as f32 - 4.5, 0.0]);
            }
        }
        for k in 0..10 {
            pts.push([0.3 * k as f32, 1.0 + 0.1 * k as f32, 2.0]);
        }
        cloud(pts)
    }

    #[test]
    fn flags_exactly_the_plane() {
        let g = remove_ground(&plane_plus_box(), &GroundParams::default());
        assert_eq!(g.iter().filter(|&&x| x).count(), 100);
        assert!(g[..100].iter().all(|&x| x));
        assert!(g[100..].iter().all(|&x| !x));
    }

    #[test]
    fn too_few_points() {
        let g = remove_ground(&cloud(vec![[0.0, 0.0, -1.0], [1.0, 0.0, -1.0]]), &GroundParams::default());
        assert_eq!(g, vec![false, false]);
    }

    #[test]
    fn collinear_points_have_no_ground() {
        let pts = (0..20).map(|i| [i as f32, 0.0, -1.0]).collect();
        let g = remove_ground(&cloud(pts), &GroundParams::default());
        assert!(g.iter().all(|&x| !x));
    }

    #[test]
    fn plane_above_sensor_is_not_ground() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f32, j as f32, 3.0]);
            }
        }
        let g = remove_ground(&cloud(pts), &GroundParams::default());
        assert!(g.iter().all(|&x| !x));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let c = plane_plus_box();
        let p = GroundParams {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(remove_ground(&c, &p), remove_ground(&c, &p));
    }
}
