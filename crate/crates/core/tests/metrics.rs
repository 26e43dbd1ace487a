use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use striprf::detect::{
    average_precision, decode, encode_boxes, iou, map_suite, match_detections, nms, BBox,
    Detection, GroundTruth, Interp,
};

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let (w, h) = (
        rng.random_range(2.0..extent / 3.0),
        rng.random_range(2.0..extent / 3.0),
    );
    BBox::new(
        rng.random_range(0.0..extent - w),
        rng.random_range(0.0..extent - h),
        w,
        h,
    )
}

/// Random scene: ground truths plus jittered copies and clutter as detections.
fn scene(rng: &mut ChaCha8Rng, images: u64, classes: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image_id in 0..images {
        for _ in 0..rng.random_range(0..6) {
            let g = GroundTruth {
                image_id,
                class_id: rng.random_range(0..classes),
                bbox: random_box(rng, 100.0),
            };
            gts.push(g);
            if rng.random_bool(0.8) {
                let j = |v: f64, rng: &mut ChaCha8Rng| v + rng.random_range(-2.0..2.0);
                let b = g.bbox;
                let bbox = BBox::new(
                    j(b.x, rng),
                    j(b.y, rng),
                    b.w.max(3.0) + rng.random_range(-1.0..1.0),
                    b.h.max(3.0),
                );
                dets.push(Detection {
                    image_id,
                    class_id: g.class_id,
                    bbox,
                    score: rng.random_range(0.0..1.0),
                });
            }
        }
        for _ in 0..rng.random_range(0..4) {
            let bbox = random_box(rng, 100.0);
            dets.push(Detection {
                image_id,
                class_id: rng.random_range(0..classes),
                bbox,
                score: rng.random_range(0.0..1.0),
            });
        }
    }
    (dets, gts)
}

/// Textbook NMS: per group, repeatedly take the best remaining box and drop
/// everything overlapping it.
fn nms_reference(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(u64, usize), Vec<(usize, Detection)>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups
            .entry((d.image_id, d.class_id))
            .or_default()
            .push((i, *d));
    }
    let mut kept = Vec::new();
    for (_, mut rest) in groups {
        while !rest.is_empty() {
            let best = (0..rest.len())
                .max_by(|&a, &b| {
                    rest[a]
                        .1
                        .score
                        .total_cmp(&rest[b].1.score)
                        .then(rest[b].0.cmp(&rest[a].0))
                })
                .unwrap();
            let top = rest.remove(best);
            rest.retain(|(_, d)| iou(&d.bbox, &top.1.bbox) <= thr);
            kept.push(top);
        }
    }
    kept.sort_by_key(|(i, _)| *i);
    kept.into_iter().map(|(_, d)| d).collect()
}

#[test]
fn nms_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let dets: Vec<Detection> = (0..50)
            .map(|_| Detection {
                image_id: rng.random_range(0..2),
                class_id: rng.random_range(0..3),
                bbox: random_box(&mut rng, 60.0),
                score: (rng.random_range(0..20) as f64) / 20.0,
            })
            .collect();
        for thr in [0.3, 0.5, 0.7] {
            let mut got = nms(&dets, thr);
            let order = |d: &Detection| dets.iter().position(|e| e == d).unwrap();
            got.sort_by_key(order);
            assert_eq!(got, nms_reference(&dets, thr));
        }
    }
}

#[test]
fn nms_output_is_ranked() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (dets, _) = scene(&mut rng, 3, 2);
    let kept = nms(&dets, 0.5);
    assert!(kept
        .windows(2)
        .all(|w| w[0].score > w[1].score
            || (w[0].score == w[1].score && w[0].class_id <= w[1].class_id)));
}

#[test]
fn decode_inverts_encode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (stride, grid) = (8usize, 8usize);
    let size = (stride * grid) as f64;
    for _ in 0..20 {
        // at most one box per cell, each at least one stride wide so the
        // cell center lies inside it
        let mut cells = std::collections::BTreeSet::new();
        let gts: Vec<GroundTruth> = (0..6)
            .filter_map(|_| {
                let (w, h) = (rng.random_range(8.0..24.0), rng.random_range(8.0..24.0));
                let b = BBox::new(
                    rng.random_range(0.0..size - w),
                    rng.random_range(0.0..size - h),
                    w,
                    h,
                );
                let (cx, cy) = b.center();
                cells
                    .insert(((cx / stride as f64) as usize, (cy / stride as f64) as usize))
                    .then_some(GroundTruth {
                        image_id: 0,
                        class_id: rng.random_range(0..3),
                        bbox: b,
                    })
            })
            .collect();
        let map = encode_boxes(&gts, 3, stride, (1, grid, grid), 6.0);
        let dets = decode(&[map], &[stride], 3, 0.5, (grid * stride, grid * stride)).unwrap();
        assert_eq!(dets.len(), gts.len());
        for g in &gts {
            let d = dets
                .iter()
                .find(|d| d.class_id == g.class_id && iou(&d.bbox, &g.bbox) > 0.9)
                .unwrap();
            for (a, b) in [
                (d.bbox.x, g.bbox.x),
                (d.bbox.y, g.bbox.y),
                (d.bbox.w, g.bbox.w),
                (d.bbox.h, g.bbox.h),
            ] {
                assert!((a - b).abs() <= 0.5, "{d:?} vs {g:?}");
            }
        }
    }
}

#[test]
fn matching_conserves_ground_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let (dets, gts) = scene(&mut rng, 4, 3);
        for thr in [0.3, 0.5, 0.75, 0.95] {
            let m = match_detections(&dets, &gts, thr);
            assert_eq!(m.tp + m.fn_, gts.len());
            assert_eq!(m.tp + m.fp, dets.len());
        }
    }
}

#[test]
fn three_detection_example() {
    let labeled = [(0.9, true), (0.8, false), (0.7, true)];
    assert!((average_precision(&labeled, 2, Interp::Point101) - 0.8350).abs() < 1e-4);
    assert!(
        (average_precision(&labeled, 2, Interp::Exact) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12
    );
}

fn random_labels(rng: &mut ChaCha8Rng) -> (Vec<(f64, bool)>, usize) {
    let n = rng.random_range(1..30);
    let labeled: Vec<(f64, bool)> = (0..n)
        .map(|_| (rng.random_range(0.01..1.0), rng.random_bool(0.5)))
        .collect();
    let gt = labeled.iter().filter(|l| l.1).count() + rng.random_range(0..4);
    (labeled, gt.max(1))
}

#[test]
fn ap_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (labeled, gt) = random_labels(&mut rng);
        for interp in [Interp::Point101, Interp::Exact] {
            let ap = average_precision(&labeled, gt, interp);
            assert!((0.0..=1.0).contains(&ap));

            let cubed: Vec<_> = labeled.iter().map(|&(s, t)| (s * s * s, t)).collect();
            assert_eq!(average_precision(&cubed, gt, interp), ap);

            let mut with_fp = labeled.clone();
            with_fp.push((0.0, false));
            assert!(average_precision(&with_fp, gt, interp) <= ap + 1e-12);
        }
        let exact = average_precision(&labeled, gt, Interp::Exact);
        let mut with_tp = labeled.clone();
        with_tp.insert(0, (2.0, true));
        assert!(average_precision(&with_tp, gt + 1, Interp::Exact) >= exact - 1e-12);
    }
}

#[test]
fn borderline_overlap_counts_only_at_the_first_threshold() {
    let gts: Vec<GroundTruth> = (0..3)
        .map(|i| GroundTruth {
            image_id: i,
            class_id: 0,
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            image_id: g.image_id,
            class_id: 0,
            bbox: BBox::new(0.0, 0.0, 10.0, 5.2),
            score: 0.9,
        })
        .collect();
    assert!((iou(&dets[0].bbox, &gts[0].bbox) - 0.52).abs() < 1e-12);
    for interp in [Interp::Point101, Interp::Exact] {
        let r = map_suite(&dets, &gts, 1, 0.25, interp);
        assert_eq!(r.map50, Some(1.0));
        assert!((r.map50_95.unwrap() - 0.1).abs() < 1e-12);
    }
}

#[test]
fn f1_agrees_with_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let (dets, gts) = scene(&mut rng, 3, 3);
        let conf = rng.random_range(0.0..0.8);
        let r = map_suite(&dets, &gts, 3, conf, Interp::Point101);
        let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= conf).copied().collect();
        let m = match_detections(&kept, &gts, 0.5);
        assert_eq!((r.tp, r.fp, r.fn_), (m.tp, m.fp, m.fn_));
        let p = if kept.is_empty() {
            0.0
        } else {
            m.tp as f64 / kept.len() as f64
        };
        let rc = if gts.is_empty() {
            0.0
        } else {
            m.tp as f64 / gts.len() as f64
        };
        let f1 = if p + rc == 0.0 {
            0.0
        } else {
            2.0 * p * rc / (p + rc)
        };
        assert!((r.f1 - f1).abs() < 1e-12);
        assert!((r.precision - p).abs() < 1e-12 && (r.recall - rc).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_empty_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (_, gts) = scene(&mut rng, 5, 3);
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            image_id: g.image_id,
            class_id: g.class_id,
            bbox: g.bbox,
            score: 0.9,
        })
        .collect();
    let r = map_suite(&dets, &gts, 3, 0.25, Interp::Point101);
    assert_eq!((r.map50, r.map50_95, r.f1), (Some(1.0), Some(1.0), 1.0));

    let r = map_suite(&[], &gts, 3, 0.25, Interp::Point101);
    assert_eq!((r.map50, r.recall, r.tp), (Some(0.0), 0.0, 0));

    let r = map_suite(&dets, &[], 3, 0.25, Interp::Exact);
    assert!(!r.is_defined());
    assert_eq!(r.fp, dets.len());
}
