use std::collections::HashMap;

use crate::camera::CameraModel;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::labels::{PanopticLabel, PanopticLabeling};
use crate::segment::{labeling_to_index_sets, LidarSegment};
use crate::zeroshot::Vocabulary;

/// Most frequent non-void ground-truth class among `points`, ties to the
/// lower class id; void (0) when every point is void.
fn majority_class(points: &[u32], gt: &PanopticLabeling) -> u16 {
    let mut votes: HashMap<u16, usize> = HashMap::new();
    for &p in points {
        let s = gt.get(p as usize).semantic;
        if s != 0 {
            *votes.entry(s).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(c, _)| c)
}

/// Majority-vote class per segment.
pub fn semantic_oracle(segments: &[LidarSegment], gt: &PanopticLabeling) -> Result<Vec<u16>> {
    segments
        .iter()
        .map(|s| {
            s.check_bounds(gt.len())?;
            Ok(majority_class(&s.point_indices, gt))
        })
        .collect()
}

/// Relabels a prediction by majority vote: each nonzero instance id is one
/// segment and takes its majority ground-truth class. Points with instance 0,
/// and segments lying entirely on void, become void.
pub fn apply_semantic_oracle(pred: &PanopticLabeling, gt: &PanopticLabeling) -> Result<PanopticLabeling> {
    gt.ensure_len(pred.len())?;
    let mut out = PanopticLabeling::void(pred.len());
    for (inst, points) in labeling_to_index_sets(pred) {
        let c = majority_class(&points, gt);
        if c == 0 {
            continue;
        }
        for p in points {
            out.labels_mut()[p as usize] = PanopticLabel::new(c, inst);
        }
    }
    Ok(out)
}

/// Collapses all points of each stuff class into one instance: the smallest
/// nonzero instance id the class already uses (0 if it uses none). Thing
/// classes and ids unknown to `vocab` are untouched.
pub fn merge_stuff(labeling: &PanopticLabeling, vocab: &Vocabulary) -> PanopticLabeling {
    let mut target: HashMap<u16, u16> = HashMap::new();
    for l in labeling.labels() {
        if vocab.is_thing(l.semantic) != Some(false) {
            continue;
        }
        let t = target.entry(l.semantic).or_insert(0);
        if l.instance != 0 && (*t == 0 || l.instance < *t) {
            *t = l.instance;
        }
    }
    PanopticLabeling::new(
        labeling
            .labels()
            .iter()
            .map(|l| match target.get(&l.semantic) {
                Some(&t) => PanopticLabel::new(l.semantic, t),
                None => *l,
            })
            .collect(),
    )
}

/// Per-point mask: true iff the point projects into at least one camera.
pub fn frustum_filter(cloud: &PointCloud, cameras: &[CameraModel]) -> Result<Vec<bool>> {
    if cameras.is_empty() {
        return Err(Error::invalid("frustum filtering needs at least one camera"));
    }
    Ok(cloud
        .points()
        .iter()
        .map(|p| cameras.iter().any(|c| c.project(p.xyz()).is_some()))
        .collect())
}
