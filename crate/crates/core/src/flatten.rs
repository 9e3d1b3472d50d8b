//! Flattening of an overlapping mask hierarchy into a disjoint mask set.
//!
//! Masks are visited by descending area (ties: lower mask id) and a mask is
//! kept only if its IoU with every mask kept so far stays below the NMS
//! threshold. Large masks therefore suppress their parts. Kept masks can still
//! share a few pixels (IoU below threshold but nonzero); each contested pixel
//! goes to the larger kept mask, so the output is strictly disjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ImageMask, ImageMaskSet, RleMask};

/// NMS IoU threshold of the label engine.
pub const DEFAULT_NMS_IOU: f64 = 0.01;

/// Visiting order for suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionOrder {
    /// Descending mask area.
    #[default]
    Area,
    /// Descending generator score (ablation only; masks without a score sort last).
    Score,
}

fn priority_order(masks: &[ImageMask], order: SuppressionOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    let by_area = |a: &usize, b: &usize| {
        masks[*b]
            .area
            .cmp(&masks[*a].area)
            .then(masks[*a].mask_id.cmp(&masks[*b].mask_id))
    };
    match order {
        SuppressionOrder::Area => idx.sort_by(by_area),
        SuppressionOrder::Score => idx.sort_by(|a, b| {
            let sa = masks[*a].score.unwrap_or(f32::NEG_INFINITY);
            let sb = masks[*b].score.unwrap_or(f32::NEG_INFINITY);
            sb.total_cmp(&sa).then_with(|| by_area(a, b))
        }),
    }
    idx
}

/// Flattens `raw` with area-ordered suppression.
pub fn flatten_masks(raw: &ImageMaskSet, nms_iou: f64) -> Result<ImageMaskSet> {
    flatten_masks_with(raw, nms_iou, SuppressionOrder::Area)
}

pub fn flatten_masks_with(raw: &ImageMaskSet, nms_iou: f64, order: SuppressionOrder) -> Result<ImageMaskSet> {
    if !(nms_iou > 0.0 && nms_iou <= 1.0) {
        return Err(Error::invalid(format!("nms_iou {nms_iou} outside (0, 1]")));
    }
    raw.validate()?;

    let mut kept: Vec<usize> = Vec::new();
    for i in priority_order(&raw.masks, order) {
        let m = &raw.masks[i];
        if m.rle.is_empty() {
            continue;
        }
        if kept.iter().all(|&k| raw.masks[k].rle.iou(&m.rle) < nms_iou) {
            kept.push(i);
        }
    }

    // contested pixels: larger area first, ties to the lower mask id
    kept.sort_by(|&a, &b| {
        raw.masks[b]
            .area
            .cmp(&raw.masks[a].area)
            .then(raw.masks[a].mask_id.cmp(&raw.masks[b].mask_id))
    });
    let mut claimed = vec![false; raw.width as usize * raw.height as usize];
    let mut out = Vec::with_capacity(kept.len());
    for i in kept {
        let m = &raw.masks[i];
        let own: Vec<u32> = m
            .rle
            .pixels()
            .filter(|&p| !std::mem::replace(&mut claimed[p as usize], true))
            .collect();
        if own.is_empty() {
            continue;
        }
        let rle = RleMask::from_pixels(raw.width, raw.height, own)?;
        let mut flat = ImageMask::new(m.mask_id, rle, m.token.clone());
        flat.score = m.score;
        out.push(flat);
    }
    out.sort_by(|a, b| b.area.cmp(&a.area).then(a.mask_id.cmp(&b.mask_id)));
    ImageMaskSet::new(raw.camera_id.clone(), raw.width, raw.height, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ClipToken;

    const W: u32 = 40;
    const H: u32 = 40;

    fn mask(id: u32, pixels: impl IntoIterator<Item = u32>) -> ImageMask {
        ImageMask::new(
            id,
            RleMask::from_pixels(W, H, pixels).unwrap(),
            ClipToken::new(vec![id as f64, 1.0]).unwrap(),
        )
    }

    fn set(masks: Vec<ImageMask>) -> ImageMaskSet {
        ImageMaskSet::new("c", W, H, masks).unwrap()
    }

    #[test]
    fn disjoint_masks_both_kept() {
        let out = flatten_masks(&set(vec![mask(1, 0..100), mask(2, 200..250)]), 0.01).unwrap();
        let ids: Vec<u32> = out.masks.iter().map(|m| m.mask_id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn contained_part_is_suppressed() {
        // |A| = 100, B ⊂ A with |B| = 50: IoU = 0.5
        let out = flatten_masks(&set(vec![mask(2, 0..50), mask(1, 0..100)]), 0.01).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.masks[0].mask_id, 1);
        assert_eq!(out.masks[0].area, 100);
    }

    #[test]
    fn single_shared_pixel_goes_to_lower_id() {
        // both of area 100 sharing pixel 99: IoU = 1/199 < 0.01
        let a = mask(1, 0..100);
        let b = mask(2, 99..199);
        assert!((a.rle.iou(&b.rle) - 1.0 / 199.0).abs() < 1e-15);
        let out = flatten_masks(&set(vec![b, a]), 0.01).unwrap();
        assert_eq!(out.masks.len(), 2);
        let m1 = out.masks.iter().find(|m| m.mask_id == 1).unwrap();
        let m2 = out.masks.iter().find(|m| m.mask_id == 2).unwrap();
        assert!(m1.rle.contains(99));
        assert!(!m2.rle.contains(99));
        assert_eq!(m2.area, 99);
        assert!(out.is_disjoint());
        assert_eq!(m2.token.values(), &[2.0, 1.0]);
    }

    #[test]
    fn tiny_nested_mask_clipped_away() {
        // IoU 5/1000 < 0.01 keeps it, but clipping leaves nothing
        let out = flatten_masks(&set(vec![mask(1, 0..1000), mask(2, 10..15)]), 0.01).unwrap();
        assert_eq!(out.masks.len(), 1);
    }

    #[test]
    fn score_order_can_prefer_parts() {
        let whole = mask(1, 0..100).with_score(0.5);
        let part = mask(2, 0..50).with_score(0.9);
        let out = flatten_masks_with(&set(vec![whole.clone(), part.clone()]), 0.01, SuppressionOrder::Score).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.masks[0].mask_id, 2);
        let out = flatten_masks(&set(vec![whole, part]), 0.01).unwrap();
        assert_eq!(out.masks[0].mask_id, 1);
    }

    #[test]
    fn rejects_bad_threshold() {
        let s = set(vec![mask(1, 0..10)]);
        assert!(flatten_masks(&s, 0.0).is_err());
        assert!(flatten_masks(&s, 1.5).is_err());
        assert!(flatten_masks(&s, 1.0).is_ok());
    }

    #[test]
    fn rejects_out_of_bounds_mask() {
        let mut s = set(vec![mask(1, 0..10)]);
        s.masks[0].rle = RleMask::from_pixels(W + 1, H, 0..10).unwrap();
        assert!(flatten_masks(&s, 0.01).is_err());
    }
}
