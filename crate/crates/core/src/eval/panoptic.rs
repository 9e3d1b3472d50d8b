use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{PanopticLabel, PanopticLabeling};
use crate::zeroshot::Vocabulary;

use super::report::{ClassMetrics, PQReport, ReportMeta};

/// IoU a prediction must strictly exceed to match a ground-truth segment.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Per-point mask; points outside it are not counted at all.
    #[serde(skip)]
    pub frustum_mask: Option<Vec<bool>>,
    /// Key stuff segments by class only, ignoring instance ids on both sides.
    /// When off, every (semantic, instance) pair is a segment, so unmerged
    /// stuff predictions are penalized.
    pub stuff_per_class: bool,
}

/// Raw per-class counts; summing them over scans and taking ratios at the end
/// gives the dataset metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Semantic-channel intersection and union in points.
    pub sem_inter: u64,
    pub sem_union: u64,
}

impl ClassCounts {
    fn add(&mut self, o: &ClassCounts) {
        self.iou_sum += o.iou_sum;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.sem_inter += o.sem_inter;
        self.sem_union += o.sem_union;
    }

    /// Some segment of the class exists in ground truth or prediction.
    pub fn present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn pq(&self) -> f64 {
        let d = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if d == 0.0 {
            0.0
        } else {
            self.iou_sum / d
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        let d = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if d == 0.0 {
            0.0
        } else {
            self.tp as f64 / d
        }
    }

    pub fn semantic_iou(&self) -> f64 {
        if self.sem_union == 0 {
            0.0
        } else {
            self.sem_inter as f64 / self.sem_union as f64
        }
    }
}

/// Accumulates panoptic counts over scans of one vocabulary.
#[derive(Debug, Clone)]
pub struct PanopticEvaluator {
    class_ids: Vec<u16>,
    names: Vec<String>,
    is_thing: Vec<bool>,
    index: HashMap<u16, usize>,
    counts: Vec<ClassCounts>,
    stuff_per_class: bool,
    scans: usize,
}

impl PanopticEvaluator {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self {
            class_ids: vocab.class_ids(),
            names: vocab.classes.iter().map(|c| c.name.clone()).collect(),
            is_thing: vocab.classes.iter().map(|c| c.is_thing).collect(),
            index: vocab.classes.iter().enumerate().map(|(i, c)| (c.id, i)).collect(),
            counts: vec![ClassCounts::default(); vocab.classes.len()],
            stuff_per_class: false,
            scans: 0,
        }
    }

    fn class_index(&self, id: u16) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class id {id} is not in the vocabulary")))
    }

    /// Counts of one scan. Points with void ground truth, or outside the
    /// frustum mask, are dropped before segments are formed.
    pub fn scan_counts(
        &self,
        pred: &PanopticLabeling,
        gt: &PanopticLabeling,
        options: &EvalOptions,
    ) -> Result<Vec<ClassCounts>> {
        gt.ensure_len(pred.len())?;
        if let Some(m) = &options.frustum_mask {
            if m.len() != gt.len() {
                return Err(Error::LengthMismatch {
                    expected: gt.len(),
                    actual: m.len(),
                });
            }
        }
        let key = |l: PanopticLabel, k: usize| {
            if options.stuff_per_class && !self.is_thing[k] {
                (l.semantic, 0)
            } else {
                (l.semantic, l.instance)
            }
        };

        // segment id -> (class index, size)
        let mut gt_ids: HashMap<(u16, u16), usize> = HashMap::new();
        let mut gt_segs: Vec<(usize, u64)> = Vec::new();
        let mut pr_ids: HashMap<(u16, u16), usize> = HashMap::new();
        let mut pr_segs: Vec<(usize, u64)> = Vec::new();
        let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
        let mut counts = vec![ClassCounts::default(); self.class_ids.len()];
        let mut sem_gt = vec![0u64; self.class_ids.len()];
        let mut sem_pr = vec![0u64; self.class_ids.len()];

        for (i, (&g, &p)) in gt.labels().iter().zip(pred.labels()).enumerate() {
            if g.semantic == 0 || options.frustum_mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let gk = self.class_index(g.semantic)?;
            sem_gt[gk] += 1;
            let next = gt_segs.len();
            let gi = *gt_ids.entry(key(g, gk)).or_insert(next);
            if gi == next {
                gt_segs.push((gk, 0));
            }
            gt_segs[gi].1 += 1;
            if p.semantic == 0 {
                continue;
            }
            let pk = self.class_index(p.semantic)?;
            sem_pr[pk] += 1;
            if pk == gk {
                counts[gk].sem_inter += 1;
            }
            let next = pr_segs.len();
            let pi = *pr_ids.entry(key(p, pk)).or_insert(next);
            if pi == next {
                pr_segs.push((pk, 0));
            }
            pr_segs[pi].1 += 1;
            if pk == gk {
                *pairs.entry((gi, pi)).or_default() += 1;
            }
        }

        let mut gt_matched = vec![false; gt_segs.len()];
        let mut pr_matched = vec![false; pr_segs.len()];
        // sorted so the float sums do not depend on hash order
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable_by_key(|&(k, _)| k);
        for ((gi, pi), inter) in pairs {
            let union = gt_segs[gi].1 + pr_segs[pi].1 - inter;
            let iou = inter as f64 / union as f64;
            if iou > MATCH_IOU {
                let c = &mut counts[gt_segs[gi].0];
                c.tp += 1;
                c.iou_sum += iou;
                gt_matched[gi] = true;
                pr_matched[pi] = true;
            }
        }
        for (&(k, _), m) in gt_segs.iter().zip(&gt_matched) {
            if !m {
                counts[k].fn_ += 1;
            }
        }
        for (&(k, _), m) in pr_segs.iter().zip(&pr_matched) {
            if !m {
                counts[k].fp += 1;
            }
        }
        for (k, c) in counts.iter_mut().enumerate() {
            c.sem_union = sem_gt[k] + sem_pr[k] - c.sem_inter;
        }
        Ok(counts)
    }

    pub fn add_scan(&mut self, pred: &PanopticLabeling, gt: &PanopticLabeling, options: &EvalOptions) -> Result<()> {
        let c = self.scan_counts(pred, gt, options)?;
        self.add_counts(&c);
        self.stuff_per_class |= options.stuff_per_class;
        Ok(())
    }

    /// Adds counts produced by [`Self::scan_counts`], e.g. from another thread.
    pub fn add_counts(&mut self, counts: &[ClassCounts]) {
        for (a, b) in self.counts.iter_mut().zip(counts) {
            a.add(b);
        }
        self.scans += 1;
    }

    pub fn counts(&self) -> &[ClassCounts] {
        &self.counts
    }

    pub fn report(&self, protocols: Vec<String>) -> PQReport {
        let classes: Vec<ClassMetrics> = (0..self.class_ids.len())
            .map(|k| ClassMetrics::new(self.class_ids[k], &self.names[k], self.is_thing[k], self.counts[k]))
            .collect();
        let mean = |f: &dyn Fn(&ClassMetrics) -> f64, sel: &dyn Fn(&ClassMetrics) -> bool| {
            let v: Vec<f64> = classes.iter().filter(|c| c.present && sel(c)).map(f).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let all = |_: &ClassMetrics| true;
        let th = |c: &ClassMetrics| c.is_thing;
        let st = |c: &ClassMetrics| !c.is_thing;
        PQReport {
            pq: mean(&|c| c.pq, &all),
            pq_dagger: mean(&|c| if c.is_thing { c.pq } else { c.iou }, &all),
            sq: mean(&|c| c.sq, &all),
            rq: mean(&|c| c.rq, &all),
            pq_th: mean(&|c| c.pq, &th),
            sq_th: mean(&|c| c.sq, &th),
            rq_th: mean(&|c| c.rq, &th),
            pq_st: mean(&|c| c.pq, &st),
            sq_st: mean(&|c| c.sq, &st),
            rq_st: mean(&|c| c.rq, &st),
            miou: mean(&|c| c.iou, &all),
            n_scans: self.scans,
            classes,
            meta: ReportMeta::new(self.stuff_per_class, protocols),
        }
    }
}

/// Panoptic metrics of a single scan.
pub fn evaluate_panoptic(
    pred: &PanopticLabeling,
    gt: &PanopticLabeling,
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<PQReport> {
    let mut ev = PanopticEvaluator::new(vocab);
    ev.add_scan(pred, gt, options)?;
    Ok(ev.report(Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zeroshot::VocabClass;

    fn vocab(things: &[u16], stuff: &[u16]) -> Vocabulary {
        let c = |id: u16, is_thing| VocabClass {
            id,
            name: format!("c{id}"),
            prompts: vec![format!("c{id}")],
            is_thing,
            super_class_id: None,
            raw_ids: Vec::new(),
        };
        let mut cs: Vec<VocabClass> = things.iter().map(|&i| c(i, true)).collect();
        cs.extend(stuff.iter().map(|&i| c(i, false)));
        Vocabulary::new("t", cs, vec!["{}".into()]).unwrap()
    }

    fn lab(v: &[(u16, u16)]) -> PanopticLabeling {
        PanopticLabeling::new(v.iter().map(|&(s, i)| PanopticLabel::new(s, i)).collect())
    }

    #[test]
    fn perfect_prediction() {
        let gt = lab(&[(1, 1), (1, 1), (1, 2), (2, 0), (2, 0), (0, 0)]);
        let r = evaluate_panoptic(&gt, &gt, &vocab(&[1], &[2]), &EvalOptions::default()).unwrap();
        for c in &r.classes {
            assert_eq!((c.pq, c.sq, c.rq), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.pq, 1.0);
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.pq_dagger, 1.0);
    }

    #[test]
    fn empty_prediction_is_all_false_negatives() {
        let gt = lab(&[(1, 1), (1, 1), (2, 0)]);
        let pred = PanopticLabeling::void(3);
        let r = evaluate_panoptic(&pred, &gt, &vocab(&[1], &[2]), &EvalOptions::default()).unwrap();
        assert_eq!(r.pq, 0.0);
        assert_eq!(r.classes[0].counts.fn_, 1);
        assert_eq!(r.classes[1].counts.fn_, 1);
    }

    #[test]
    fn eight_of_ten_points() {
        let mut g = vec![(1, 1); 10];
        g.extend([(2, 0); 5]);
        let mut p = vec![(1, 7); 8];
        p.extend([(0, 0); 2]);
        p.extend([(2, 0); 5]);
        let r = evaluate_panoptic(&lab(&p), &lab(&g), &vocab(&[1], &[2]), &EvalOptions::default()).unwrap();
        let car = &r.classes[0];
        assert_eq!(car.counts.tp, 1);
        assert!((car.pq - 0.8).abs() < 1e-12);
        assert!((car.pq * 100.0 - 80.0).abs() < 1e-9);
    }

    #[test]
    fn iou_of_exactly_half_is_not_a_match() {
        let g = lab(&[(1, 1), (1, 1)]);
        let p = lab(&[(1, 1), (0, 0)]);
        let r = evaluate_panoptic(&p, &g, &vocab(&[1], &[]), &EvalOptions::default()).unwrap();
        assert_eq!(r.classes[0].counts.tp, 0);
        assert_eq!(r.classes[0].counts.fp, 1);
        assert_eq!(r.classes[0].counts.fn_, 1);
    }

    #[test]
    fn void_ground_truth_is_ignored() {
        // prediction spills onto void points: not counted in the union
        let g = lab(&[(1, 1), (1, 1), (0, 0), (0, 0)]);
        let p = lab(&[(1, 3), (1, 3), (1, 3), (1, 3)]);
        let r = evaluate_panoptic(&p, &g, &vocab(&[1], &[]), &EvalOptions::default()).unwrap();
        assert_eq!(r.pq, 1.0);
    }

    #[test]
    fn frustum_mask_restricts_counts() {
        let g = lab(&[(1, 1), (1, 1), (1, 2), (1, 2)]);
        let p = lab(&[(1, 1), (1, 1), (0, 0), (0, 0)]);
        let opts = EvalOptions {
            frustum_mask: Some(vec![true, true, false, false]),
            ..Default::default()
        };
        let r = evaluate_panoptic(&p, &g, &vocab(&[1], &[]), &opts).unwrap();
        assert_eq!(r.pq, 1.0);
        let bad = EvalOptions {
            frustum_mask: Some(vec![true]),
            ..Default::default()
        };
        assert!(evaluate_panoptic(&p, &g, &vocab(&[1], &[]), &bad).is_err());
    }

    #[test]
    fn absent_classes_do_not_dilute() {
        let g = lab(&[(1, 1)]);
        let r = evaluate_panoptic(&g, &g, &vocab(&[1, 3], &[2]), &EvalOptions::default()).unwrap();
        assert_eq!(r.pq, 1.0);
        assert_eq!(r.pq_st, 0.0);
        assert!(!r.classes[1].present);
    }

    #[test]
    fn split_stuff_is_penalized_unless_keyed_per_class() {
        let g = lab(&[(2, 0); 6]);
        let p = lab(&[(2, 1), (2, 1), (2, 1), (2, 2), (2, 2), (2, 2)]);
        let v = vocab(&[], &[2]);
        let r = evaluate_panoptic(&p, &g, &v, &EvalOptions::default()).unwrap();
        assert_eq!(r.classes[0].counts.tp, 0);
        // semantic IoU is unaffected, so PQ† still credits the class
        assert_eq!(r.pq_dagger, 1.0);
        let opts = EvalOptions {
            stuff_per_class: true,
            ..Default::default()
        };
        assert_eq!(evaluate_panoptic(&p, &g, &v, &opts).unwrap().pq, 1.0);
    }

    #[test]
    fn errors() {
        let v = vocab(&[1], &[]);
        assert!(evaluate_panoptic(&lab(&[(1, 1)]), &lab(&[(1, 1), (1, 1)]), &v, &EvalOptions::default()).is_err());
        assert!(evaluate_panoptic(&lab(&[(9, 1)]), &lab(&[(1, 1)]), &v, &EvalOptions::default()).is_err());
    }

    #[test]
    fn multi_scan_sums_before_ratios() {
        let v = vocab(&[1], &[]);
        let mut ev = PanopticEvaluator::new(&v);
        let g = lab(&[(1, 1), (1, 1)]);
        ev.add_scan(&g, &g, &EvalOptions::default()).unwrap();
        ev.add_scan(&PanopticLabeling::void(2), &g, &EvalOptions::default()).unwrap();
        let r = ev.report(Vec::new());
        assert_eq!(r.n_scans, 2);
        // 1 / (1 + 0.5)
        assert!((r.pq - 2.0 / 3.0).abs() < 1e-12);
    }
}
