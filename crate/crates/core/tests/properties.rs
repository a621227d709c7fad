use proptest::prelude::*;

use alertkit::formats;
use alertkit::labeling::{self, LabelingConfig};
use alertkit::map_eval::{self, MapConfig};
use alertkit::metrics::{self, ScoredFrame};
use alertkit::model::{
    ActivationMap, BoundingBox, Detection, FrameRecord, GroundTruthObject, Label,
};
use alertkit::pool::{self, PoolKind};

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..50.0f64, 0.5..50.0f64).prop_map(|(x, y, w, h)| {
        BoundingBox {
            x1: x,
            y1: y,
            x2: x + w,
            y2: y + h,
        }
    })
}

fn category() -> impl Strategy<Value = String> {
    prop_oneof![Just("person".to_string()), Just("car".to_string())]
}

fn frame() -> impl Strategy<Value = FrameRecord> {
    (
        prop::collection::vec((bbox(), category()), 0..6),
        prop::collection::vec((bbox(), category(), 0.0..=1.0f64), 0..8),
    )
        .prop_map(|(gt, det)| FrameRecord {
            frame_id: "p".into(),
            ground_truth: gt
                .into_iter()
                .map(|(b, c)| GroundTruthObject::new(b, c))
                .collect(),
            detections: det
                .into_iter()
                .map(|(b, c, s)| Detection::new(b, c, s))
                .collect(),
        })
}

fn scored_frames() -> impl Strategy<Value = Vec<ScoredFrame>> {
    prop::collection::vec((0u8..10, any::<bool>()), 2..30)
        .prop_filter("both classes", |v| {
            v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
        })
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, fail))| ScoredFrame {
                    frame_id: format!("f{i}"),
                    failure_score: s as f64 / 10.0,
                    true_label: if fail { Label::Failure } else { Label::Success },
                    per_frame_map: 0.5,
                })
                .collect()
        })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = map_eval::iou(&a, &b);
        prop_assert_eq!(v, map_eval::iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn matching_respects_counts(f in frame(), thr in 0.05..=1.0f64) {
        for cat in ["person", "car"] {
            let m = map_eval::match_detections(&f.ground_truth, &f.detections, cat, thr);
            prop_assert!(m.tp_count() <= m.n_gt().min(m.true_positive.len()));
            let mut used: Vec<usize> = m.gt_matched_by.iter().flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            prop_assert_eq!(used.len(), m.tp_count());
            prop_assert!(m.scores.windows(2).all(|w| w[0] >= w[1]));
        }
        if let Some(v) = map_eval::per_frame_map(&f, &MapConfig::default()) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn exact_detections_score_one(gt in prop::collection::vec((bbox(), category()), 1..6)) {
        let mut f = FrameRecord::new("x");
        for (b, c) in gt {
            f.detections.push(Detection::new(b, c.clone(), 1.0));
            f.ground_truth.push(GroundTruthObject::new(b, c));
        }
        let m = map_eval::per_frame_map(&f, &MapConfig::default()).unwrap();
        prop_assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_labels_bound_failure_fraction(
        maps in prop::collection::vec(0.0..=1.0f64, 1..60),
        k in 1.0..99.0f64,
    ) {
        let named: Vec<(String, f64)> = maps.iter().enumerate().map(|(i, m)| (format!("f{i}"), *m)).collect();
        let (_, labels) = labeling::assign_labels(&named, LabelingConfig::Percentile(k)).unwrap();
        let failures = labels.iter().filter(|l| l.label.is_failure()).count() as f64;
        let n = labels.len() as f64;
        prop_assert!(failures / n <= k / 100.0 + 1.0 / n + 1e-12);

        let mut reversed = named.clone();
        reversed.reverse();
        let (_, again) = labeling::assign_labels(&reversed, LabelingConfig::Percentile(k)).unwrap();
        for l in &again {
            let orig = labels.iter().find(|o| o.frame_id == l.frame_id).unwrap();
            prop_assert_eq!(orig.label, l.label);
        }
    }

    #[test]
    fn flipping_scores_flips_auroc(frames in scored_frames()) {
        let auc = metrics::roc_auc(&frames).unwrap();
        let flipped: Vec<ScoredFrame> = frames
            .iter()
            .map(|f| ScoredFrame { failure_score: 1.0 - f.failure_score, ..f.clone() })
            .collect();
        prop_assert!((metrics::roc_auc(&flipped).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn pooled_statistics_are_ordered(values in prop::collection::vec(-5.0..5.0f64, 12)) {
        let map = ActivationMap::new("f", "l", 2, 2, 3, values).unwrap();
        let f = pool::pool_map(PoolKind::MeanMaxStd, &map).values;
        for c in 0..2 {
            prop_assert!(f[c] <= f[2 + c] + 1e-12);
            prop_assert!(f[4 + c] >= 0.0);
        }
    }

    #[test]
    fn actf_round_trips_binary32(values in prop::collection::vec(-1e6..1e6f64, 24)) {
        let narrowed: Vec<f64> = values.iter().map(|v| *v as f32 as f64).collect();
        let map = ActivationMap::new("f", "l", 2, 3, 4, narrowed).unwrap();
        let back = formats::decode_actf(&formats::encode_actf(&map), "f", "l", "mem").unwrap();
        prop_assert_eq!(back, map);
    }
}
