use std::collections::BTreeSet;

use llf_core::camera::parse_json_calib;
use llf_core::eval::{apply_semantic_oracle, evaluate_panoptic, merge_stuff, EvalOptions, PanopticEvaluator};
use llf_core::flatten::flatten_masks;
use llf_core::segment::{are_disjoint, labeling_to_index_sets, Provenance};
use llf_core::unproject::ViewFusion;
use llf_core::zeroshot::{attach_embeddings, build_prompt_manifest, classify_token, map_to_super_classes, EmbeddingMatrix, VocabClass};
use llf_core::{ClipToken, ImageMask, ImageMaskSet, LidarSegment, PanopticLabel, PanopticLabeling, RleMask, Vocabulary};
use proptest::prelude::*;

const W: u32 = 24;
const H: u32 = 16;

fn mask_strategy() -> impl Strategy<Value = Vec<BTreeSet<u32>>> {
    prop::collection::vec(prop::collection::btree_set(0..W * H, 1..120), 0..10)
}

fn mask_set(pixels: &[BTreeSet<u32>]) -> ImageMaskSet {
    let masks = pixels
        .iter()
        .enumerate()
        .map(|(i, px)| {
            ImageMask::new(
                i as u32 + 1,
                RleMask::from_pixels(W, H, px.iter().copied()).unwrap(),
                ClipToken::new(vec![1.0, i as f64]).unwrap(),
            )
        })
        .collect();
    ImageMaskSet::new("cam", W, H, masks).unwrap()
}

fn five_classes() -> Vocabulary {
    let classes = (1..=5u16)
        .map(|id| VocabClass {
            id,
            name: format!("c{id}"),
            prompts: vec![format!("c{id}")],
            is_thing: id <= 2,
            super_class_id: None,
            raw_ids: Vec::new(),
        })
        .collect();
    Vocabulary::new("five", classes, vec!["{}".into()]).unwrap()
}

fn labeling_strategy(n: usize) -> impl Strategy<Value = (PanopticLabeling, PanopticLabeling)> {
    let label = (0..=5u16, 0..=4u16).prop_map(|(s, i)| PanopticLabel::new(s, i));
    (prop::collection::vec(label.clone(), n), prop::collection::vec(label, n))
        .prop_map(|(p, g)| (PanopticLabeling::new(p), PanopticLabeling::new(g)))
}

fn total_tp_and_iou(pred: &PanopticLabeling, gt: &PanopticLabeling, vocab: &Vocabulary) -> (u64, f64) {
    let mut ev = PanopticEvaluator::new(vocab);
    ev.add_scan(pred, gt, &EvalOptions::default()).unwrap();
    ev.counts().iter().fold((0, 0.0), |(t, s), c| (t + c.tp, s + c.iou_sum))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flatten_output_is_disjoint_idempotent_and_drawn_from_input(pixels in mask_strategy(), nms in 0.001f64..1.0) {
        let raw = mask_set(&pixels);
        let flat = flatten_masks(&raw, nms).unwrap();
        prop_assert!(flat.is_disjoint());
        prop_assert_eq!(&flatten_masks(&flat, nms).unwrap(), &flat);
        for m in &flat.masks {
            let src = &pixels[m.mask_id as usize - 1];
            prop_assert!(m.rle.pixels().all(|p| src.contains(&p)));
        }
    }

    #[test]
    fn fusion_is_disjoint_and_covers_its_inputs(
        views in prop::collection::vec(prop::collection::vec(prop::collection::btree_set(0u32..60, 1..20), 0..5), 1..4),
        iou in 0.001f64..1.0,
    ) {
        let mut fusion = ViewFusion::new(60, iou);
        let mut covered = BTreeSet::new();
        let mut n_in = 0;
        for (v, segs) in views.iter().enumerate() {
            let segs: Vec<LidarSegment> = segs
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    covered.extend(s.iter().copied());
                    LidarSegment::new(s.iter().copied().collect(), ClipToken::new(vec![1.0, (v * 7 + k) as f64]).unwrap(), Provenance::default())
                })
                .collect();
            n_in += segs.len();
            fusion.add_view(segs).unwrap();
        }
        let out = fusion.finish();
        prop_assert!(are_disjoint(&out));
        prop_assert!(out.len() <= n_in);
        prop_assert!(out.iter().all(|s| !s.is_empty()));
        let got: BTreeSet<u32> = out.iter().flat_map(|s| s.point_indices.iter().copied()).collect();
        prop_assert_eq!(got, covered);
    }

    #[test]
    fn projection_matches_matrix_arithmetic(
        yaw in -3.1f64..3.1,
        t in prop::array::uniform3(-2.0f64..2.0),
        f in 50.0f64..800.0,
        p in prop::array::uniform3(-30.0f64..30.0),
    ) {
        // lidar -> camera: yaw about lidar z, then the axis swap, then t
        let (s, c) = yaw.sin_cos();
        let r = [[-s, -c, 0.0], [0.0, 0.0, -1.0], [c, -s, 0.0]];
        let calib = format!(
            r#"{{"cameras": [{{"camera_id": "c",
              "projection": [[{f}, 0.0, 320.0, 0.0], [0.0, {f}, 240.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
              "lidar_to_cam": [[{}, {}, {}, {}], [{}, {}, {}, {}], [{}, {}, {}, {}], [0.0, 0.0, 0.0, 1.0]],
              "width": 640, "height": 480}}]}}"#,
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]
        );
        let cam = parse_json_calib(&calib).unwrap().remove(0);
        let q: Vec<f64> = (0..3).map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]).collect();
        let want = if q[2] > 1e-6 {
            let (u, v) = (f * q[0] / q[2] + 320.0, f * q[1] / q[2] + 240.0);
            (u.floor() >= 0.0 && v.floor() >= 0.0 && u.floor() < 640.0 && v.floor() < 480.0).then_some((u, v, q[2]))
        } else {
            None
        };
        match (cam.project(p), want) {
            (None, None) => {}
            (Some(got), Some((u, v, d))) => {
                prop_assert!((got.u - u).abs() < 1e-9 && (got.v - v).abs() < 1e-9 && (got.depth - d).abs() < 1e-9);
            }
            (got, want) => prop_assert!(false, "project {:?} vs {:?}", got, want),
        }
    }

    #[test]
    fn evaluation_is_invariant_to_point_order((pred, gt) in labeling_strategy(60), seed in any::<u64>()) {
        let vocab = five_classes();
        let mut perm: Vec<usize> = (0..60).collect();
        let mut x = seed | 1;
        for i in (1..perm.len()).rev() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            perm.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let shuffle = |l: &PanopticLabeling| PanopticLabeling::new(perm.iter().map(|&i| l.get(i)).collect());
        let a = evaluate_panoptic(&pred, &gt, &vocab, &EvalOptions::default()).unwrap();
        let b = evaluate_panoptic(&shuffle(&pred), &shuffle(&gt), &vocab, &EvalOptions::default()).unwrap();
        prop_assert_eq!(a.classes.len(), b.classes.len());
        for (x, y) in a.classes.iter().zip(&b.classes) {
            prop_assert_eq!((x.counts.tp, x.counts.fp, x.counts.fn_), (y.counts.tp, y.counts.fp, y.counts.fn_));
            prop_assert!((x.pq - y.pq).abs() < 1e-12);
        }
    }

    /// Majority classes maximize true positives and summed IoU over every
    /// other per-segment class assignment.
    #[test]
    fn oracle_maximizes_matches((pred, gt) in labeling_strategy(40), alt in prop::collection::vec(1..=5u16, 5)) {
        let vocab = five_classes();
        let oracle = apply_semantic_oracle(&pred, &gt).unwrap();
        let (tp, iou) = total_tp_and_iou(&oracle, &gt, &vocab);
        let mut other = PanopticLabeling::void(pred.len());
        for (inst, pts) in labeling_to_index_sets(&pred) {
            for p in pts {
                other.labels_mut()[p as usize] = PanopticLabel::new(alt[inst as usize % alt.len()], inst);
            }
        }
        let (tp2, iou2) = total_tp_and_iou(&other, &gt, &vocab);
        prop_assert!(tp >= tp2);
        prop_assert!(iou >= iou2 - 1e-12);
    }

    #[test]
    fn merge_stuff_is_idempotent_and_leaves_one_stuff_instance((pred, _) in labeling_strategy(50)) {
        let vocab = five_classes();
        let m = merge_stuff(&pred, &vocab);
        prop_assert_eq!(&merge_stuff(&m, &vocab), &m);
        for c in 3..=5u16 {
            let ids: BTreeSet<u16> = m.labels().iter().filter(|l| l.semantic == c).map(|l| l.instance).collect();
            prop_assert!(ids.len() <= 1);
        }
        for (a, b) in pred.labels().iter().zip(m.labels()) {
            prop_assert_eq!(a.semantic, b.semantic);
            if a.semantic <= 2 {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn label_words_round_trip(words in prop::collection::vec(any::<u32>(), 0..200)) {
        let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        let l = PanopticLabeling::from_bytes(&bytes).unwrap();
        prop_assert_eq!(l.to_bytes(), bytes);
        for (w, lab) in words.iter().zip(l.labels()) {
            prop_assert_eq!((lab.semantic as u32, lab.instance as u32), (w & 0xFFFF, w >> 16));
        }
    }
}

#[test]
fn merged_stuff_fragments_match_the_ground_truth_region() {
    let vocab = five_classes();
    // one road region of 12 points predicted as 4 fragments of 3
    let gt = PanopticLabeling::new(vec![PanopticLabel::new(4, 0); 12]);
    let pred = PanopticLabeling::new((0..12).map(|i| PanopticLabel::new(4, i / 3 + 1)).collect());
    let before = evaluate_panoptic(&pred, &gt, &vocab, &EvalOptions::default()).unwrap();
    let after = evaluate_panoptic(&merge_stuff(&pred, &vocab), &gt, &vocab, &EvalOptions::default()).unwrap();
    assert_eq!(before.pq_st, 0.0);
    assert_eq!((after.pq_st, after.sq_st, after.rq_st), (1.0, 1.0, 1.0));
}

#[test]
fn noisy_tokens_keep_their_class() {
    const DIM: usize = 24;
    let vocab = Vocabulary::builtin("semantickitti").unwrap();
    let rows = build_prompt_manifest(&vocab)
        .unwrap()
        .entries
        .iter()
        .map(|e| (0..DIM).map(|k| if k + 1 == e.class_id as usize { 1.0 } else { 0.0 }).collect())
        .collect();
    let vocab = attach_embeddings(vocab, &EmbeddingMatrix { dim: DIM, rows }).unwrap();
    let mut x: u64 = 0x9E37_79B9;
    let mut noise = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x % 2001) as f64 / 1000.0 - 1.0
    };
    for c in &vocab.classes {
        for _ in 0..50 {
            // per-coordinate noise below 0.1 cannot overturn a unit signal in 24 dims
            let v: Vec<f64> = (0..DIM)
                .map(|k| if k + 1 == c.id as usize { 1.0 } else { 0.0 } + 0.1 * noise())
                .collect();
            assert_eq!(classify_token(&ClipToken::new(v).unwrap(), &vocab).unwrap().best, c.id);
        }
    }
}

#[test]
fn super_class_mapping_is_idempotent() {
    let fine = Vocabulary::builtin("semantickitti").unwrap();
    let sup = Vocabulary::builtin("super_classes").unwrap();
    let l = PanopticLabeling::new(
        fine.class_ids()
            .into_iter()
            .chain([0])
            .enumerate()
            .map(|(i, c)| PanopticLabel::new(c, i as u16))
            .collect(),
    );
    let once = map_to_super_classes(&l, &fine).unwrap();
    assert_eq!(map_to_super_classes(&once, &sup).unwrap(), once);
    assert!(once.labels().iter().all(|x| x.semantic == 0 || sup.class(x.semantic).is_some()));
    assert_eq!(once.labels().last().unwrap().semantic, 0);
}
