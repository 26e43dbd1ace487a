use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::boxes::{iou, ranking, Detection, GroundTruth};

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// `(index into the detection slice, is true positive)` in processing order.
    pub labels: Vec<(usize, bool)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Detections are processed by descending score. Each takes the unmatched GT
/// of the same image and class with the highest IoU, provided that IoU is at
/// least `iou_threshold`.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut pools: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        pools.entry((g.image_id, g.class_id)).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(dets.len());
    let mut tp = 0;
    for i in ranking(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(pool) = pools.get(&(d.image_id, d.class_id)) {
            for &g in pool {
                if taken[g] {
                    continue;
                }
                let v = iou(&d.bbox, &gts[g].bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                tp += 1;
                labels.push((i, true));
            }
            None => labels.push((i, false)),
        }
    }
    MatchResult {
        fp: labels.len() - tp,
        fn_: gts.len() - tp,
        labels,
        tp,
    }
}

/// Zero wherever a denominator would be zero.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Mean of the precision envelope at recall 0, 0.01, …, 1.
    #[default]
    #[serde(rename = "101pt")]
    Point101,
    /// Exact area under the precision envelope.
    Exact,
}

impl FromStr for Interp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "101pt" => Ok(Interp::Point101),
            "exact" => Ok(Interp::Exact),
            other => Err(format!(
                "unknown interpolation {other:?} (expected 101pt or exact)"
            )),
        }
    }
}

impl fmt::Display for Interp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interp::Point101 => "101pt",
            Interp::Exact => "exact",
        })
    }
}

/// AP of one class from `(score, is_tp)` pairs. Ties in score keep input order.
pub fn average_precision(labeled: &[(f64, bool)], gt_count: usize, interp: Interp) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.sort_by(|&a, &b| labeled[b].0.total_cmp(&labeled[a].0).then(a.cmp(&b)));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if labeled[i].1 {
            tp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // envelope: best precision at this recall or beyond
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interp {
        Interp::Point101 => {
            let mut total = 0.0;
            let mut j = 0;
            for step in 0..=100 {
                let r = step as f64 / 100.0;
                while j < recall.len() && recall[j] < r - 1e-12 {
                    j += 1;
                }
                if j < recall.len() {
                    total += precision[j];
                }
            }
            total / 101.0
        }
        Interp::Exact => {
            let mut area = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub gt_count: usize,
    pub det_count: usize,
    /// AP at each threshold of [`iou_thresholds`]; `None` when the class has
    /// no ground truth and is left out of the means.
    pub ap: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub interp: Interp,
    pub iou_thresholds: Vec<f64>,
    pub classes: Vec<ClassMetrics>,
    /// `None` when no class has any ground truth.
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    pub conf_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn is_defined(&self) -> bool {
        self.map50.is_some()
    }
}

/// Per-class AP over the ten IoU thresholds (all detections, any score), and
/// micro-averaged P / R / F1 at IoU 0.5 over detections scoring at least
/// `conf_threshold`.
pub fn map_suite(
    dets: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    conf_threshold: f64,
    interp: Interp,
) -> MetricsReport {
    let thresholds = iou_thresholds();
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let cd: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).copied().collect();
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_id == c).copied().collect();
        let ap = (!cg.is_empty()).then(|| {
            thresholds
                .iter()
                .map(|&t| {
                    let m = match_detections(&cd, &cg, t);
                    let labeled: Vec<(f64, bool)> =
                        m.labels.iter().map(|&(i, tp)| (cd[i].score, tp)).collect();
                    average_precision(&labeled, cg.len(), interp)
                })
                .collect::<Vec<f64>>()
        });
        classes.push(ClassMetrics {
            class_id: c,
            gt_count: cg.len(),
            det_count: cd.len(),
            ap,
        });
    }
    let scored: Vec<&Vec<f64>> = classes.iter().filter_map(|c| c.ap.as_ref()).collect();
    let (map50, map50_95) = if scored.is_empty() {
        (None, None)
    } else {
        let k = scored.len() as f64;
        let m50 = scored.iter().map(|ap| ap[0]).sum::<f64>() / k;
        let mall = scored
            .iter()
            .map(|ap| ap.iter().sum::<f64>() / ap.len() as f64)
            .sum::<f64>()
            / k;
        (Some(m50), Some(mall))
    };

    let confident: Vec<Detection> = dets
        .iter()
        .filter(|d| d.score >= conf_threshold)
        .copied()
        .collect();
    let m = match_detections(&confident, gts, thresholds[0]);
    let (precision, recall, f1) = precision_recall_f1(m.tp, m.fp, m.fn_);
    MetricsReport {
        interp,
        iou_thresholds: thresholds,
        classes,
        map50,
        map50_95,
        conf_threshold,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        precision,
        recall,
        f1,
    }
}
