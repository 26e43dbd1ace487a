use serde::{Deserialize, Serialize};

use crate::detect::{BBox, Detection, GroundTruth};
use crate::error::{Error, Result};

pub const DEFAULT_CLASS_NAMES: [&str; 4] = ["D00", "D10", "D20", "D40"];

fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub class_id: usize,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub objects: Vec<ObjectEntry>,
}

/// Ground truth and detections share this schema; detections carry a score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    #[serde(default = "default_class_names")]
    pub class_names: Vec<String>,
    pub images: Vec<ImageEntry>,
}

impl AnnotationDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AnnotationDoc = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::format(
                    "annotations",
                    format!("duplicate image id {}", img.id),
                ));
            }
            for o in &img.objects {
                if o.class_id >= self.class_names.len() {
                    return Err(Error::format(
                        "annotations",
                        format!(
                            "image {}: class_id {} but only {} class names",
                            img.id,
                            o.class_id,
                            self.class_names.len()
                        ),
                    ));
                }
                let [_, _, w, h] = o.bbox;
                if o.bbox.iter().any(|v| !v.is_finite()) || w < 0.0 || h < 0.0 {
                    return Err(Error::format(
                        "annotations",
                        format!("image {}: bad bbox {:?}", img.id, o.bbox),
                    ));
                }
                if let Some(s) = o.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(Error::format(
                            "annotations",
                            format!("image {}: score {s} outside [0, 1]", img.id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_same_classes(&self, other: &AnnotationDoc) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::ClassNames(
                self.class_names.clone(),
                other.class_names.clone(),
            ));
        }
        Ok(())
    }

    fn boxes(&self) -> impl Iterator<Item = (u64, &ObjectEntry, BBox)> {
        self.images.iter().flat_map(|img| {
            img.objects.iter().map(move |o| {
                let [x, y, w, h] = o.bbox;
                let b = BBox::new(x, y, w, h).clamp_to(img.width as f64, img.height as f64);
                (img.id, o, b)
            })
        })
    }

    /// Objects as ground truth, boxes clipped to their image.
    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.boxes()
            .map(|(image_id, o, bbox)| GroundTruth {
                image_id,
                class_id: o.class_id,
                bbox,
            })
            .collect()
    }

    /// Objects as detections; every object must carry a score.
    pub fn detections(&self) -> Result<Vec<Detection>> {
        self.boxes()
            .map(|(image_id, o, bbox)| {
                let score = o.score.ok_or_else(|| {
                    Error::format(
                        "detections",
                        format!("image {image_id}: object without a score"),
                    )
                })?;
                Ok(Detection {
                    image_id,
                    class_id: o.class_id,
                    bbox,
                    score,
                })
            })
            .collect()
    }

    /// One entry per `(id, width, height)`, objects in the given order.
    pub fn from_detections(
        images: &[(u64, usize, usize)],
        dets: &[Detection],
        class_names: Vec<String>,
    ) -> Self {
        let images = images
            .iter()
            .map(|&(id, width, height)| ImageEntry {
                id,
                width,
                height,
                objects: dets
                    .iter()
                    .filter(|d| d.image_id == id)
                    .map(|d| ObjectEntry {
                        class_id: d.class_id,
                        bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                        score: Some(d.score),
                    })
                    .collect(),
            })
            .collect();
        AnnotationDoc {
            class_names,
            images,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_clamping() {
        let doc = AnnotationDoc::from_json(
            r#"{"images": [{"id": 3, "width": 10, "height": 10,
                "objects": [{"class_id": 2, "bbox": [8, -1, 5, 4]}]}]}"#,
        )
        .unwrap();
        assert_eq!(doc.class_names, ["D00", "D10", "D20", "D40"]);
        let g = doc.ground_truths();
        assert_eq!(g[0].bbox, BBox::new(8.0, 0.0, 2.0, 3.0));
        assert!(doc.detections().is_err());
    }

    #[test]
    fn class_id_out_of_range() {
        let text = r#"{"class_names": ["a"], "images": [{"id": 0, "width": 4, "height": 4,
            "objects": [{"class_id": 1, "bbox": [0, 0, 1, 1]}]}]}"#;
        assert!(AnnotationDoc::from_json(text).is_err());
    }

    #[test]
    fn score_round_trip() {
        let d = Detection {
            image_id: 0,
            class_id: 1,
            bbox: BBox::new(1.0, 2.0, 3.0, 4.0),
            score: 0.75,
        };
        let doc = AnnotationDoc::from_detections(&[(0, 8, 8)], &[d], default_class_names());
        let back = AnnotationDoc::from_json(&doc.to_json()).unwrap();
        assert_eq!(back.detections().unwrap(), vec![d]);
    }
}
