//! Post-processing and evaluation: decoding head maps into boxes, NMS,
//! greedy TP/FP matching, and precision / recall / AP / mAP.

mod boxes;
mod decode;
mod metrics;

pub use boxes::{iou, nms, BBox, Detection, GroundTruth};
pub use decode::{decode, encode_boxes};
pub use metrics::{
    average_precision, iou_thresholds, map_suite, match_detections, precision_recall_f1,
    ClassMetrics, Interp, MatchResult, MetricsReport,
};
