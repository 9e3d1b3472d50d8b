//! Lidar segments: point-index sets over one scan with their feature token
//! and provenance, plus the segment-table file format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{PanopticLabel, PanopticLabeling};
use crate::mask::{read_f32_blob, write_f32_blob, ClipToken};

/// A source image mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaskRef {
    pub camera_id: String,
    pub mask_id: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<MaskRef>,
    /// Set when the point set was replaced by a cluster.
    pub refined: bool,
}

impl Provenance {
    pub fn cameras(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.sources.iter().map(|s| s.camera_id.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarSegment {
    /// Sorted, unique indices into the owning scan.
    pub point_indices: Vec<u32>,
    pub token: ClipToken,
    pub provenance: Provenance,
}

impl LidarSegment {
    pub fn new(mut point_indices: Vec<u32>, token: ClipToken, provenance: Provenance) -> Self {
        point_indices.sort_unstable();
        point_indices.dedup();
        Self {
            point_indices,
            token,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    pub fn check_bounds(&self, n_points: usize) -> Result<()> {
        match self.point_indices.last() {
            Some(&i) if i as usize >= n_points => Err(Error::IndexOutOfBounds {
                index: i as usize,
                len: n_points,
            }),
            _ => Ok(()),
        }
    }
}

/// Size of the intersection of two sorted unique index lists.
pub fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// IoU of two sorted unique index lists; 0 when both are empty.
pub fn index_iou(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Union of two sorted unique index lists.
pub fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Makes segments pairwise disjoint: a point claimed by several segments goes
/// to the one that was largest before resolution, ties to the lower list
/// position. Segments keep their order; emptied segments stay in place.
pub fn resolve_contested(segments: &mut [LidarSegment]) {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| segments[b].len().cmp(&segments[a].len()).then(a.cmp(&b)));
    let n = segments
        .iter()
        .filter_map(|s| s.point_indices.last())
        .max()
        .map_or(0, |&m| m as usize + 1);
    let mut claimed = vec![false; n];
    for &k in &order {
        segments[k].point_indices.retain(|&p| !std::mem::replace(&mut claimed[p as usize], true));
    }
}

/// True when no point belongs to two segments.
pub fn are_disjoint(segments: &[LidarSegment]) -> bool {
    let mut seen = std::collections::HashSet::new();
    segments
        .iter()
        .flat_map(|s| s.point_indices.iter())
        .all(|&p| seen.insert(p))
}

/// Renders disjoint segments as a labeling. Non-empty segments get
/// consecutive instance ids from 1 in list order; `semantic` supplies the
/// class per segment (void when `None`).
pub fn segments_to_labeling(
    segments: &[LidarSegment],
    n_points: usize,
    semantic: Option<&[u16]>,
) -> Result<PanopticLabeling> {
    let mut labels = vec![PanopticLabel::VOID; n_points];
    let mut next: usize = 0;
    for (k, s) in segments.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        s.check_bounds(n_points)?;
        next += 1;
        if next > u16::MAX as usize {
            return Err(Error::InstanceOverflow(next));
        }
        let sem = semantic.map_or(0, |c| c[k]);
        for &p in &s.point_indices {
            labels[p as usize] = PanopticLabel::new(sem, next as u16);
        }
    }
    Ok(PanopticLabeling::new(labels))
}

/// Groups points by nonzero instance id (ascending id).
pub fn labeling_to_index_sets(labeling: &PanopticLabeling) -> Vec<(u16, Vec<u32>)> {
    let mut by_id: std::collections::BTreeMap<u16, Vec<u32>> = Default::default();
    for (i, l) in labeling.labels().iter().enumerate() {
        if l.instance != 0 {
            by_id.entry(l.instance).or_default().push(i as u32);
        }
    }
    by_id.into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentEntry {
    point_indices: Vec<u32>,
    token_row: usize,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentTable {
    scan_id: String,
    n_points: usize,
    token_dim: usize,
    token_file: String,
    segments: Vec<SegmentEntry>,
}

/// Writes `<dir>/<stem>.segments.json` plus `<stem>.tokens.bin`.
pub fn write_segments(
    segments: &[LidarSegment],
    scan_id: &str,
    n_points: usize,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = segments.first().map_or(0, |s| s.token.dim());
    for s in segments {
        s.check_bounds(n_points)?;
        if s.token.dim() != dim {
            return Err(Error::invalid("segments carry tokens of different dimensions"));
        }
    }
    let token_file = format!("{stem}.tokens.bin");
    write_f32_blob(&dir.join(&token_file), segments.iter().map(|s| s.token.to_f32()))?;
    let table = SegmentTable {
        scan_id: scan_id.to_string(),
        n_points,
        token_dim: dim,
        token_file,
        segments: segments
            .iter()
            .enumerate()
            .map(|(k, s)| SegmentEntry {
                point_indices: s.point_indices.clone(),
                token_row: k,
                provenance: s.provenance.clone(),
            })
            .collect(),
    };
    let path = dir.join(format!("{stem}.segments.json"));
    fs::write(&path, serde_json::to_string(&table)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a segment table. Returns `(scan_id, n_points, segments)`.
pub fn read_segments(path: impl AsRef<Path>) -> Result<(String, usize, Vec<LidarSegment>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: SegmentTable = serde_json::from_str(&text)?;
    let rows = if table.segments.is_empty() {
        Vec::new()
    } else {
        read_f32_blob(&path.parent().unwrap_or(Path::new(".")).join(&table.token_file), table.token_dim)?
    };
    let mut out = Vec::with_capacity(table.segments.len());
    for e in table.segments {
        let row = rows
            .get(e.token_row)
            .ok_or_else(|| Error::invalid(format!("token row {} missing", e.token_row)))?;
        let seg = LidarSegment::new(e.point_indices, ClipToken::from_f32(row)?, e.provenance);
        seg.check_bounds(table.n_points)?;
        out.push(seg);
    }
    Ok((table.scan_id, table.n_points, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(ix: &[u32]) -> LidarSegment {
        LidarSegment::new(ix.to_vec(), ClipToken::new(vec![1.0, 0.0]).unwrap(), Provenance::default())
    }

    #[test]
    fn set_arithmetic() {
        assert_eq!(intersection_size(&[0, 2, 4, 6], &[1, 2, 3, 4]), 2);
        assert_eq!(union_sorted(&[0, 2, 4], &[1, 2, 5]), vec![0, 1, 2, 4, 5]);
        let a: Vec<u32> = (0..10).collect();
        let b: Vec<u32> = (5..15).collect();
        assert!((index_iou(&a, &b) - 5.0 / 15.0).abs() < 1e-15);
        assert_eq!(index_iou(&[], &[]), 0.0);
    }

    #[test]
    fn contested_points_go_to_larger_segment() {
        let mut segs = vec![seg(&[0, 1]), seg(&[1, 2, 3]), seg(&[3, 4])];
        resolve_contested(&mut segs);
        assert_eq!(segs[0].point_indices, vec![0]);
        assert_eq!(segs[1].point_indices, vec![1, 2, 3]);
        assert_eq!(segs[2].point_indices, vec![4]);
        assert!(are_disjoint(&segs));
    }

    #[test]
    fn contested_tie_goes_to_lower_position() {
        let mut segs = vec![seg(&[0, 1]), seg(&[1, 2])];
        resolve_contested(&mut segs);
        assert_eq!(segs[0].point_indices, vec![0, 1]);
        assert_eq!(segs[1].point_indices, vec![2]);
    }

    #[test]
    fn labeling_from_segments() {
        let segs = vec![seg(&[0, 1]), seg(&[]), seg(&[3])];
        let l = segments_to_labeling(&segs, 5, Some(&[4, 5, 6])).unwrap();
        let words: Vec<_> = l.labels().iter().map(|l| (l.semantic, l.instance)).collect();
        assert_eq!(words, vec![(4, 1), (4, 1), (0, 0), (6, 2), (0, 0)]);
        assert!(segments_to_labeling(&segs, 3, None).is_err());
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(&[1, 3, 5]);
        s.provenance.sources.push(MaskRef {
            camera_id: "image_2".into(),
            mask_id: 4,
        });
        let path = write_segments(&[s.clone(), seg(&[0])], "000001", 6, dir.path(), "000001").unwrap();
        let (scan, n, back) = read_segments(path).unwrap();
        assert_eq!((scan.as_str(), n), ("000001", 6));
        assert_eq!(back[0], s);
        assert_eq!(back.len(), 2);
    }
}
