//! Synthetic street scene shared by the CLI tests: a flat road in front of
//! the sensor and five boxes further out, seen by one forward pinhole camera.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use llf_core::camera::parse_json_calib;
use llf_core::cloud::write_point_cloud;
use llf_core::labels::write_labels;
use llf_core::mask::write_mask_set;
use llf_core::{CameraModel, ClipToken, ImageMask, ImageMaskSet, PanopticLabel, PanopticLabeling, Point, PointCloud, RleMask};

pub const SCAN: &str = "000000";
pub const CAMERA: &str = "cam0";
pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
pub const ROAD: u16 = 9;
pub const CAR: u16 = 1;
pub const TOKEN_DIM: usize = 8;
pub const BOX_CENTERS_Y: [f32; 5] = [-8.0, -4.0, 0.0, 4.0, 8.0];

/// Lidar x forward, y left, z up; camera x right, y down, z forward.
pub const CALIB_JSON: &str = r#"{"cameras": [{
  "camera_id": "cam0",
  "projection": [[300.0, 0.0, 320.0, 0.0], [0.0, 300.0, 240.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
  "lidar_to_cam": [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
  "width": 640, "height": 480}]}"#;

pub struct Scene {
    pub cloud: PointCloud,
    pub gt: PanopticLabeling,
    pub camera: CameraModel,
    /// Point sets of the planted objects: the road first, then the boxes.
    pub objects: Vec<Vec<u32>>,
}

pub fn camera() -> CameraModel {
    parse_json_calib(CALIB_JSON).unwrap().remove(0)
}

/// Road grid at z = -1.7 for x in [3, 10]; 1 m boxes at x = 15 spaced 4 m
/// apart (3 m gaps), floating at z in [-0.5, 0.5]. Grid spacing 0.25 m.
pub fn scene() -> Scene {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut objects = vec![Vec::new()];
    for i in 0..=28 {
        for j in 0..=24 {
            objects[0].push(points.len() as u32);
            points.push(Point::new(3.0 + 0.25 * i as f32, -3.0 + 0.25 * j as f32, -1.7, 0.1));
            labels.push(PanopticLabel::new(ROAD, 0));
        }
    }
    for (b, &cy) in BOX_CENTERS_Y.iter().enumerate() {
        let mut idx = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    idx.push(points.len() as u32);
                    points.push(Point::new(
                        14.5 + 0.25 * i as f32,
                        cy - 0.5 + 0.25 * j as f32,
                        -0.5 + 0.25 * k as f32,
                        0.5,
                    ));
                    labels.push(PanopticLabel::new(CAR, b as u16 + 1));
                }
            }
        }
        objects.push(idx);
    }
    Scene {
        cloud: PointCloud::new(SCAN, points).unwrap(),
        gt: PanopticLabeling::new(labels),
        camera: camera(),
        objects,
    }
}

/// Unit basis vector `k` of the token space.
pub fn token(k: usize) -> ClipToken {
    let mut v = vec![0.0; TOKEN_DIM];
    v[k] = 1.0;
    ClipToken::new(v).unwrap()
}

impl Scene {
    /// Pixel of each point of `object`, keyed by pixel.
    fn pixels(&self, object: usize) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &p in &self.objects[object] {
            let pr = self.camera.project(self.cloud.points()[p as usize].xyz()).expect("object in view");
            out.entry(self.camera.pixel_index(&pr)).or_default().push(p);
        }
        out
    }

    /// Box neighbor receiving bleed from box `b` (1-based object index).
    pub fn adjacent(b: usize) -> usize {
        if b < BOX_CENTERS_Y.len() {
            b + 1
        } else {
            b - 1
        }
    }

    /// One mask per object from the pixels its points project to. With
    /// `bleed > 0`, every box hands the pixels closest to its adjacent box,
    /// carrying at least `bleed` of its points, over to that box's mask.
    pub fn masks(&self, bleed: f64) -> ImageMaskSet {
        let mut sets: Vec<Vec<u32>> = (0..self.objects.len()).map(|o| self.pixels(o).keys().copied().collect()).collect();
        if bleed > 0.0 {
            let mut moved: Vec<(usize, Vec<u32>)> = Vec::new();
            for b in 1..self.objects.len() {
                let adj = Self::adjacent(b);
                let toward = |px: u32| {
                    let u = (px % WIDTH) as f64;
                    // image u decreases with lidar y
                    let adj_u = 320.0 - 300.0 * BOX_CENTERS_Y[adj - 1] as f64 / 15.0;
                    (u - adj_u).abs()
                };
                let by_pixel = self.pixels(b);
                let mut px: Vec<u32> = by_pixel.keys().copied().collect();
                px.sort_by(|a, c| toward(*a).total_cmp(&toward(*c)).then(a.cmp(c)));
                let need = (bleed * self.objects[b].len() as f64).ceil() as usize;
                let mut taken = Vec::new();
                let mut n = 0;
                for p in px {
                    if n >= need {
                        break;
                    }
                    n += by_pixel[&p].len();
                    taken.push(p);
                }
                sets[b].retain(|p| !taken.contains(p));
                moved.push((adj, taken));
            }
            for (adj, taken) in moved {
                sets[adj].extend(taken);
            }
        }
        let masks = sets
            .into_iter()
            .enumerate()
            .map(|(o, px)| ImageMask::new(o as u32 + 1, RleMask::from_pixels(WIDTH, HEIGHT, px).unwrap(), token(o)))
            .collect();
        ImageMaskSet::new(CAMERA, WIDTH, HEIGHT, masks).unwrap()
    }

    /// Writes the dataset layout the pipeline config expects and returns the
    /// config path. Ground truth goes to `<root>/gt/<scan>.label`.
    pub fn write_dataset(&self, root: &Path) -> PathBuf {
        fs::create_dir_all(root.join("velodyne")).unwrap();
        fs::create_dir_all(root.join("gt")).unwrap();
        write_point_cloud(&self.cloud, root.join("velodyne").join(format!("{SCAN}.bin"))).unwrap();
        write_labels(&self.gt, self.cloud.len(), root.join("gt").join(format!("{SCAN}.label"))).unwrap();
        fs::write(root.join("calib.json"), CALIB_JSON).unwrap();
        write_mask_set(&self.masks(0.0), root.join("masks").join(SCAN), CAMERA).unwrap();
        let cfg = root.join("pipeline.toml");
        fs::write(
            &cfg,
            "[dataset]\nclouds = \"velodyne\"\ncalib = \"calib.json\"\nmasks = \"masks\"\noutput = \"out\"\n",
        )
        .unwrap();
        cfg
    }
}
