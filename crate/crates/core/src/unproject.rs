//! Lifting of flattened image masks onto a Lidar scan and cross-camera fusion
//! of the lifted segments.

use crate::camera::CameraModel;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::mask::{ClipToken, ImageMaskSet};
use crate::segment::{index_iou, resolve_contested, union_sorted, LidarSegment, MaskRef, Provenance};

/// Multi-view IoU threshold of the label engine.
pub const DEFAULT_FUSION_IOU: f64 = 0.01;

/// Lifts each mask of a flattened set to the scan points projecting inside
/// it. Segments with fewer than `min_points` points are dropped; the rest keep
/// the mask order, token and a single-source provenance.
pub fn unproject_masks(
    cloud: &PointCloud,
    cam: &CameraModel,
    masks: &ImageMaskSet,
    min_points: usize,
) -> Result<Vec<LidarSegment>> {
    if masks.camera_id != cam.camera_id {
        return Err(Error::CameraMismatch {
            masks: masks.camera_id.clone(),
            camera: cam.camera_id.clone(),
        });
    }
    if (masks.width, masks.height) != (cam.width(), cam.height()) {
        return Err(Error::invalid(format!(
            "masks are {}x{} but camera {} is {}x{}",
            masks.width,
            masks.height,
            cam.camera_id,
            cam.width(),
            cam.height()
        )));
    }
    masks.validate()?;

    // pixel -> mask slot + 1; later masks never overwrite (input is disjoint)
    let mut owner = vec![0u32; masks.width as usize * masks.height as usize];
    for (k, m) in masks.masks.iter().enumerate() {
        for p in m.rle.pixels() {
            let slot = &mut owner[p as usize];
            if *slot == 0 {
                *slot = k as u32 + 1;
            }
        }
    }

    let mut members: Vec<Vec<u32>> = vec![Vec::new(); masks.masks.len()];
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some(proj) = cam.project(p.xyz()) {
            let slot = owner[cam.pixel_index(&proj) as usize];
            if slot != 0 {
                members[slot as usize - 1].push(i as u32);
            }
        }
    }

    Ok(members
        .into_iter()
        .zip(&masks.masks)
        .filter(|(pts, _)| !pts.is_empty() && pts.len() >= min_points)
        .map(|(pts, m)| {
            LidarSegment::new(
                pts,
                m.token.clone(),
                Provenance {
                    sources: vec![MaskRef {
                        camera_id: masks.camera_id.clone(),
                        mask_id: m.mask_id,
                    }],
                    refined: false,
                },
            )
        })
        .collect())
}

/// Sequential multi-view fusion state for one scan.
///
/// Each incoming segment merges into the current segment of maximal IoU when
/// that IoU reaches the threshold (union of points, running mean of all
/// contributing tokens renormalized to unit length); otherwise it is inserted
/// as a new segment. [`ViewFusion::finish`] resolves remaining overlaps.
#[derive(Debug, Clone)]
pub struct ViewFusion {
    n_points: usize,
    fusion_iou: f64,
    segments: Vec<LidarSegment>,
    token_sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl ViewFusion {
    pub fn new(n_points: usize, fusion_iou: f64) -> Self {
        Self {
            n_points,
            fusion_iou,
            segments: Vec::new(),
            token_sums: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Seeds the state with already fused segments. A segment's token counts
    /// as the mean of its `provenance.sources.len()` contributions.
    pub fn with_segments(n_points: usize, fusion_iou: f64, segments: Vec<LidarSegment>) -> Result<Self> {
        let mut f = Self::new(n_points, fusion_iou);
        for s in segments {
            s.check_bounds(n_points)?;
            let n = s.provenance.sources.len().max(1);
            f.token_sums.push(s.token.values().iter().map(|v| v * n as f64).collect());
            f.counts.push(n);
            f.segments.push(s);
        }
        Ok(f)
    }

    pub fn segments(&self) -> &[LidarSegment] {
        &self.segments
    }

    /// Folds in the segments of one camera view.
    pub fn add_view(&mut self, incoming: Vec<LidarSegment>) -> Result<()> {
        for s in incoming {
            s.check_bounds(self.n_points)?;
            let mut best: Option<(usize, f64)> = None;
            for (k, acc) in self.segments.iter().enumerate() {
                let iou = index_iou(&acc.point_indices, &s.point_indices);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((k, iou));
                }
            }
            match best {
                Some((k, iou)) if iou >= self.fusion_iou && iou > 0.0 => self.merge_into(k, s)?,
                _ => {
                    self.token_sums.push(s.token.values().to_vec());
                    self.counts.push(1);
                    self.segments.push(s);
                }
            }
        }
        Ok(())
    }

    fn merge_into(&mut self, k: usize, s: LidarSegment) -> Result<()> {
        let sum = &mut self.token_sums[k];
        if sum.len() != s.token.dim() {
            return Err(Error::invalid(format!(
                "cannot fuse tokens of dimension {} and {}",
                sum.len(),
                s.token.dim()
            )));
        }
        for (a, b) in sum.iter_mut().zip(s.token.values()) {
            *a += b;
        }
        self.counts[k] += 1;
        let n = self.counts[k] as f64;
        let acc = &mut self.segments[k];
        acc.token = ClipToken::new(sum.iter().map(|v| v / n).collect())?.normalized();
        acc.point_indices = union_sorted(&acc.point_indices, &s.point_indices);
        acc.provenance.sources.extend(s.provenance.sources);
        acc.provenance.refined |= s.provenance.refined;
        Ok(())
    }

    /// Final disjointness pass; segments emptied by it are dropped.
    pub fn finish(self) -> Vec<LidarSegment> {
        let mut segs = self.segments;
        resolve_contested(&mut segs);
        segs.retain(|s| !s.is_empty());
        segs
    }
}

/// Fuses the segments of one more view into `accumulated`.
pub fn fuse_views(
    accumulated: Vec<LidarSegment>,
    incoming: Vec<LidarSegment>,
    fusion_iou: f64,
    n_points: usize,
) -> Result<Vec<LidarSegment>> {
    let mut f = ViewFusion::with_segments(n_points, fusion_iou, accumulated)?;
    f.add_view(incoming)?;
    Ok(f.finish())
}
