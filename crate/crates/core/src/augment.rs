//! Training-sample preparation for partially labeled scans.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::labels::{PanopticLabel, PanopticLabeling};

/// Keeps the labeled points. Returns the cropped scan, its labels and, per
/// kept point, its index in the input.
pub fn crop_unlabeled(cloud: &PointCloud, labeling: &PanopticLabeling) -> Result<(PointCloud, PanopticLabeling, Vec<u32>)> {
    labeling.ensure_len(cloud.len())?;
    let keep: Vec<u32> = labeling
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_labeled())
        .map(|(i, _)| i as u32)
        .collect();
    let labels = keep.iter().map(|&i| labeling.get(i as usize)).collect();
    Ok((cloud.select(&keep), PanopticLabeling::new(labels), keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrankenParams {
    /// Each replica after the first is rotated by an extra uniform angle in
    /// ±jitter_deg.
    pub jitter_deg: f64,
    pub seed: u64,
    pub max_replicas: usize,
}

impl Default for FrankenParams {
    fn default() -> Self {
        Self {
            jitter_deg: 5.0,
            seed: 0,
            max_replicas: 64,
        }
    }
}

/// Smallest angular interval (radians, around the origin) that contains all
/// given azimuths, measured on the circle.
pub fn azimuth_extent(azimuths: &mut [f64]) -> f64 {
    if azimuths.is_empty() {
        return 0.0;
    }
    azimuths.sort_by(f64::total_cmp);
    let wrap = azimuths[0] + TAU - azimuths[azimuths.len() - 1];
    let max_gap = azimuths.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max);
    TAU - max_gap
}

fn rotate_z(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    let (x, y) = (p.x as f64, p.y as f64);
    Point::new((c * x - s * y) as f32, (s * x + c * y) as f32, p.z, p.intensity)
}

/// Replicates the labeled part of a scan around the vertical axis.
///
/// With θ the circular azimuth extent of the labeled points, replica j is the
/// labeled set rotated by j·θ (plus jitter), for j in 0..floor(2π/θ); when θ
/// is so small that this exceeds `max_replicas`, that many replicas are spread
/// evenly instead. Replica j shifts nonzero instance ids by j·(max instance)
/// so replicas never share ids. Only labeled points are emitted.
pub fn franken_frustum(
    cloud: &PointCloud,
    labeling: &PanopticLabeling,
    params: &FrankenParams,
) -> Result<(PointCloud, PanopticLabeling)> {
    let (crop, labels, _) = crop_unlabeled(cloud, labeling)?;
    if crop.is_empty() {
        return Err(Error::invalid("franken_frustum needs labeled points"));
    }
    let mut az: Vec<f64> = crop
        .points()
        .iter()
        .map(|p| (p.y as f64).atan2(p.x as f64).rem_euclid(TAU))
        .collect();
    let theta = azimuth_extent(&mut az);
    let fit = if theta > 0.0 {
        // slack for f32 coordinates of a frustum edge
        (TAU / theta + 1e-6).floor() as usize
    } else {
        usize::MAX
    };
    let r = fit.min(params.max_replicas.max(1));
    if r <= 1 {
        return Ok((crop, labels));
    }
    let step = if r < fit { TAU / r as f64 } else { theta };
    let max_inst = labels.max_instance() as usize;
    if max_inst * r > u16::MAX as usize {
        return Err(Error::InstanceOverflow(max_inst * r));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let jitter = params.jitter_deg.abs().to_radians();
    let mut points = Vec::with_capacity(crop.len() * r);
    let mut out = Vec::with_capacity(crop.len() * r);
    for j in 0..r {
        let dj = if j == 0 || jitter == 0.0 {
            0.0
        } else {
            rng.gen_range(-jitter..=jitter)
        };
        let angle = j as f64 * step + dj;
        let offset = (j * max_inst) as u16;
        for (p, l) in crop.points().iter().zip(labels.labels()) {
            points.push(if j == 0 { *p } else { rotate_z(p, angle) });
            let inst = if l.instance == 0 { 0 } else { l.instance + offset };
            out.push(PanopticLabel::new(l.semantic, inst));
        }
    }
    Ok((PointCloud::new(crop.scan_id.clone(), points)?, PanopticLabeling::new(out)))
}

/// Concatenates two labeled scans; `b`'s nonzero instance ids are shifted
/// past the largest id of `a`.
pub fn mix_scans(
    a: (&PointCloud, &PanopticLabeling),
    b: (&PointCloud, &PanopticLabeling),
) -> Result<(PointCloud, PanopticLabeling)> {
    a.1.ensure_len(a.0.len())?;
    b.1.ensure_len(b.0.len())?;
    let offset = a.1.max_instance() as usize;
    let top = offset + b.1.max_instance() as usize;
    if top > u16::MAX as usize {
        return Err(Error::InstanceOverflow(top));
    }
    let mut points = a.0.points().to_vec();
    points.extend_from_slice(b.0.points());
    let mut labels = a.1.labels().to_vec();
    labels.extend(b.1.labels().iter().map(|l| {
        let inst = if l.instance == 0 { 0 } else { l.instance + offset as u16 };
        PanopticLabel::new(l.semantic, inst)
    }));
    let id = if b.0.is_empty() {
        a.0.scan_id.clone()
    } else {
        format!("{}+{}", a.0.scan_id, b.0.scan_id)
    };
    Ok((PointCloud::new(id, points)?, PanopticLabeling::new(labels)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialParams {
    /// Rotation about z, radians, drawn uniformly from [lo, hi].
    pub rot_z_range: [f64; 2],
    /// Per axis: mirror with probability 1/2.
    pub flip_axes: [bool; 3],
    pub scale_range: [f64; 2],
    /// Per axis: translation drawn uniformly from ±value.
    pub translate_range: [f64; 3],
    pub seed: u64,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            rot_z_range: [0.0, 0.0],
            flip_axes: [false; 3],
            scale_range: [1.0, 1.0],
            translate_range: [0.0; 3],
            seed: 0,
        }
    }
}

/// A sampled flip → rotate → scale → translate transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialTransform {
    pub flip: [bool; 3],
    pub rot_z: f64,
    pub scale: f64,
    pub translate: [f64; 3],
}

impl SpatialTransform {
    pub fn sample(params: &SpatialParams) -> Result<Self> {
        let [s0, s1] = params.scale_range;
        if !(s0 > 0.0 && s1 > 0.0) {
            return Err(Error::invalid(format!("scale range [{s0}, {s1}] must be positive")));
        }
        let [r0, r1] = params.rot_z_range;
        if !(r0 <= r1 && s0 <= s1) || params.translate_range.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("augmentation ranges must be ordered and finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut flip = [false; 3];
        for (f, &on) in flip.iter_mut().zip(&params.flip_axes) {
            *f = on && rng.gen_bool(0.5);
        }
        let rot_z = rng.gen_range(r0..=r1);
        let scale = rng.gen_range(s0..=s1);
        let mut translate = [0.0; 3];
        for (t, &r) in translate.iter_mut().zip(&params.translate_range) {
            *t = rng.gen_range(-r..=r);
        }
        Ok(Self {
            flip,
            rot_z,
            scale,
            translate,
        })
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut q = p;
        for (v, &f) in q.iter_mut().zip(&self.flip) {
            if f {
                *v = -*v;
            }
        }
        let (s, c) = self.rot_z.sin_cos();
        let (x, y) = (c * q[0] - s * q[1], s * q[0] + c * q[1]);
        [
            x * self.scale + self.translate[0],
            y * self.scale + self.translate[1],
            q[2] * self.scale + self.translate[2],
        ]
    }
}

/// Applies a seeded random flip, rotation, scale and translation to the
/// coordinates. Intensities and point order are kept.
pub fn spatial_augment(cloud: &PointCloud, params: &SpatialParams) -> Result<PointCloud> {
    let t = SpatialTransform::sample(params)?;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let q = t.apply(p.xyz());
            Point::new(q[0] as f32, q[1] as f32, q[2] as f32, p.intensity)
        })
        .collect();
    PointCloud::new(cloud.scan_id.clone(), points)
}
