use super::boxes::{BBox, Detection, GroundTruth};
use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::tensor::{Real, Tensor};

/// Turn raw head maps into detections. Channel `c < num_classes` holds the
/// class-c logit; the last four hold l, t, r, b distances in stride units.
/// Negative distances are treated as 0 and boxes are clipped to the image.
/// The batch index becomes the image id.
pub fn decode<T: Real>(
    maps: &[Tensor<T>],
    strides: &[usize],
    num_classes: usize,
    conf_threshold: f64,
    image_size: (usize, usize),
) -> Result<Vec<Detection>> {
    if maps.len() != strides.len() {
        return Err(Error::shape(
            "decode",
            format!("{} maps but {} strides", maps.len(), strides.len()),
        ));
    }
    let (img_w, img_h) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::new();
    for (map, &stride) in maps.iter().zip(strides) {
        let [n, c, h, w] = map.dims();
        if c != num_classes + 4 {
            return Err(Error::shape(
                "decode",
                format!("map has {c} channels, expected {} classes + 4", num_classes),
            ));
        }
        let s = stride as f64;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let mut best = (0, f64::NEG_INFINITY);
                    for k in 0..num_classes {
                        let v = map.at([b, k, y, x]).as_f64();
                        if v > best.1 {
                            best = (k, v);
                        }
                    }
                    let score = sigmoid(best.1);
                    if score < conf_threshold {
                        continue;
                    }
                    let d = |i: usize| map.at([b, num_classes + i, y, x]).as_f64().max(0.0) * s;
                    let (cx, cy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
                    let bbox = BBox::from_corners(cx - d(0), cy - d(1), cx + d(2), cy + d(3))
                        .clamp_to(img_w, img_h);
                    out.push(Detection {
                        image_id: b as u64,
                        class_id: best.0,
                        bbox,
                        score,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`decode`] for one level: each box sets a +`logit` class logit
/// at the cell containing its center and the matching distances; every other
/// class logit is −`logit`.
pub fn encode_boxes(
    gts: &[GroundTruth],
    num_classes: usize,
    stride: usize,
    dims: (usize, usize, usize),
    logit: f32,
) -> Tensor<f32> {
    let (n, h, w) = dims;
    let c = num_classes + 4;
    let mut data = vec![0.0f32; n * c * h * w];
    let at = |b: usize, k: usize, y: usize, x: usize| ((b * c + k) * h + y) * w + x;
    for b in 0..n {
        for k in 0..num_classes {
            for y in 0..h {
                for x in 0..w {
                    data[at(b, k, y, x)] = -logit;
                }
            }
        }
    }
    let s = stride as f64;
    for g in gts {
        let (cx, cy) = g.bbox.center();
        let (x, y) = ((cx / s).floor() as usize, (cy / s).floor() as usize);
        let b = g.image_id as usize;
        if b >= n || x >= w || y >= h {
            continue;
        }
        let (ccx, ccy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
        let ltrb = [
            ccx - g.bbox.x,
            ccy - g.bbox.y,
            g.bbox.x + g.bbox.w - ccx,
            g.bbox.y + g.bbox.h - ccy,
        ];
        data[at(b, g.class_id, y, x)] = logit;
        for (i, v) in ltrb.iter().enumerate() {
            data[at(b, num_classes + i, y, x)] = (v / s) as f32;
        }
    }
    Tensor::new([n, c, h, w], data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_hot_cell() {
        let mut data = vec![-30.0f32; 6 * 3 * 3];
        let at = |k: usize, y: usize, x: usize| (k * 3 + y) * 3 + x;
        data[at(1, 1, 1)] = 5.0;
        for i in 0..4 {
            data[at(2 + i, 1, 1)] = 1.0;
        }
        let map = Tensor::new([1, 6, 3, 3], data).unwrap();
        let dets = decode(&[map], &[8], 2, 0.25, (24, 24)).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, 1);
        assert_eq!(dets[0].bbox, BBox::new(4.0, 4.0, 16.0, 16.0));
    }

    #[test]
    fn cold_map_is_empty() {
        let map = Tensor::full([1, 6, 4, 4], -50.0f32);
        assert!(decode(&[map], &[8], 2, 0.01, (32, 32)).unwrap().is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let map = Tensor::<f32>::zeros([1, 7, 2, 2]);
        assert!(decode(&[map], &[8], 2, 0.5, (16, 16)).is_err());
    }
}
