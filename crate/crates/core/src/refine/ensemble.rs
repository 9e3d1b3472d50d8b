use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::dbscan::dbscan;
use crate::cloud::PointCloud;
use crate::segment::{resolve_contested, LidarSegment};

/// DBSCAN density thresholds (meters) of the cluster ensemble.
pub const DEFAULT_EPSILONS: [f64; 6] = [1.2488, 0.8136, 0.6952, 0.594, 0.4353, 0.3221];

/// Segment/cluster IoU needed for replacement or to survive filtering.
pub const DEFAULT_OVERLAP: f64 = 0.5;

pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Sorted scan indices; never contains a ground point.
    pub indices: Vec<u32>,
    /// Density threshold that produced the cluster.
    pub eps: f64,
}

/// Overlapping clusters from all ensemble members, deduplicated by point set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterPool {
    pub clusters: Vec<Cluster>,
}

impl ClusterPool {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// For every segment, the cluster of highest IoU (lowest cluster index on
    /// ties) and that IoU; `None` when no cluster shares a point.
    pub fn best_matches(&self, segments: &[LidarSegment]) -> Vec<Option<(usize, f64)>> {
        let n = self
            .clusters
            .iter()
            .filter_map(|c| c.indices.last())
            .max()
            .map_or(0, |&m| m as usize + 1);
        let mut owners: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (k, c) in self.clusters.iter().enumerate() {
            for &p in &c.indices {
                owners[p as usize].push(k as u32);
            }
        }
        segments
            .par_iter()
            .map(|s| {
                let mut inter: HashMap<u32, usize> = HashMap::new();
                for &p in &s.point_indices {
                    if let Some(os) = owners.get(p as usize) {
                        for &k in os {
                            *inter.entry(k).or_default() += 1;
                        }
                    }
                }
                let mut best: Option<(usize, f64)> = None;
                let mut ks: Vec<_> = inter.into_iter().collect();
                ks.sort_unstable();
                for (k, i) in ks {
                    let c = self.clusters[k as usize].indices.len();
                    let iou = i as f64 / (s.len() + c - i) as f64;
                    if best.map_or(true, |(_, b)| iou > b) {
                        best = Some((k as usize, iou));
                    }
                }
                best
            })
            .collect()
    }
}

/// Runs DBSCAN on the non-ground points once per epsilon (in parallel) and
/// pools the clusters with at least `min_pts` points. Identical point sets
/// are kept once, attributed to the first epsilon that produced them.
pub fn build_cluster_ensemble(cloud: &PointCloud, ground: &[bool], epsilons: &[f64], min_pts: usize) -> ClusterPool {
    assert_eq!(ground.len(), cloud.len(), "ground mask length");
    let keep: Vec<u32> = (0..cloud.len() as u32).filter(|&i| !ground[i as usize]).collect();
    if keep.is_empty() || epsilons.is_empty() {
        return ClusterPool::default();
    }
    let coords: Vec<[f64; 3]> = keep.iter().map(|&i| cloud.points()[i as usize].xyz()).collect();
    let per_eps: Vec<Vec<Cluster>> = epsilons
        .par_iter()
        .map(|&eps| {
            dbscan(&coords, eps, min_pts)
                .into_iter()
                .filter(|c| c.len() >= min_pts)
                .map(|c| Cluster {
                    indices: c.into_iter().map(|i| keep[i as usize]).collect(),
                    eps,
                })
                .collect()
        })
        .collect();

    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut clusters = Vec::new();
    for c in per_eps.into_iter().flatten() {
        if seen.insert(c.indices.clone()) {
            clusters.push(c);
        }
    }
    ClusterPool { clusters }
}

/// Replaces each segment's points by its best-matching cluster when their
/// IoU reaches `overlap`; other segments are kept as they are. Tokens and the
/// number of segments are preserved. Overlaps created by replacement are
/// resolved in favor of the larger segment; a segment fully absorbed that
/// way stays in the list with no points.
pub fn replace_with_clusters(segments: &[LidarSegment], pool: &ClusterPool, overlap: f64) -> Vec<LidarSegment> {
    let matches = pool.best_matches(segments);
    let mut out: Vec<LidarSegment> = segments
        .iter()
        .zip(matches)
        .map(|(s, m)| match m {
            Some((k, iou)) if iou >= overlap => {
                let mut r = s.clone();
                r.point_indices = pool.clusters[k].indices.clone();
                r.provenance.refined = true;
                r
            }
            _ => s.clone(),
        })
        .collect();
    resolve_contested(&mut out);
    out
}

/// Keeps only the segments whose best cluster IoU reaches `overlap`.
pub fn filter_by_clusters(segments: &[LidarSegment], pool: &ClusterPool, overlap: f64) -> Vec<LidarSegment> {
    pool.best_matches(segments)
        .into_iter()
        .zip(segments)
        .filter(|(m, _)| m.is_some_and(|(_, iou)| iou >= overlap))
        .map(|(_, s)| s.clone())
        .collect()
}
