use serde::{Deserialize, Serialize};

use super::forward::Predictions;
use super::params::STRIDE;
use super::targets::{decode_deltas, GridSpec};
use crate::dataset::{BBox, CategoryId, ImageId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub iou_thresh: f64,
    pub max_dets_per_image: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { score_thresh: 0.05, iou_thresh: 0.5, max_dets_per_image: 300 }
    }
}

fn by_score_desc(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score)
}

/// Per-class greedy NMS: keep the highest-scoring box, drop same-class boxes
/// overlapping it above `iou_thresh`, repeat. Output sorted by score.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(by_score_desc);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.image_id == d.image_id && k.category_id == d.category_id && k.bbox.iou(&d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Score-filter every (location, class), decode boxes (clipped to the
/// input), run NMS and keep the top `max_dets_per_image`. Boxes are divided
/// by `scale` to return to original image coordinates.
pub fn decode_and_nms<F: Scalar>(
    pred: &Predictions<F>,
    image_id: ImageId,
    class_ids: &[CategoryId],
    scale: (f64, f64),
    cfg: &DecodeConfig,
) -> Vec<Detection> {
    assert_eq!(class_ids.len(), pred.num_classes, "class map does not match the classifier");
    let grid = GridSpec { height: pred.grid_h, width: pred.grid_w, stride: STRIDE as f64 };
    let (ih, iw) = (pred.image_size.0 as f64, pred.image_size.1 as f64);
    let k = pred.num_classes;
    let mut cands = Vec::new();
    for loc in 0..grid.locations() {
        let mut boxed: Option<Option<BBox>> = None;
        for c in 0..k {
            let z = pred.logits[loc * k + c].as_f64();
            let score = 1.0 / (1.0 + (-z).exp());
            if score < cfg.score_thresh {
                continue;
            }
            let bbox = *boxed.get_or_insert_with(|| {
                let d = [0, 1, 2, 3].map(|j| pred.regs[loc * 4 + j].as_f64());
                decode_deltas(grid.point(loc), d, grid.stride).clip(iw, ih).map(|b| {
                    BBox::new(b.x / scale.0, b.y / scale.1, b.w / scale.0, b.h / scale.1)
                })
            });
            if let Some(bbox) = bbox {
                cands.push(Detection { image_id, bbox, category_id: class_ids[c], score });
            }
        }
    }
    let mut kept = nms(cands, cfg.iou_thresh);
    kept.truncate(cfg.max_dets_per_image);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, score: f64, cat: u32) -> Detection {
        Detection { image_id: ImageId(1), bbox: BBox::new(x, 0.0, 10.0, 10.0), category_id: CategoryId(cat), score }
    }

    #[test]
    fn identical_boxes_keep_the_best() {
        let kept = nms(vec![det(0.0, 0.8, 1), det(0.0, 0.9, 1)], 0.5);
        assert_eq!(kept, vec![det(0.0, 0.9, 1)]);
    }

    #[test]
    fn nms_is_per_class() {
        let kept = nms(vec![det(0.0, 0.8, 1), det(0.0, 0.9, 2)], 0.5);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn below_threshold_yields_nothing() {
        let pred = Predictions::<f32> {
            grid_h: 2,
            grid_w: 2,
            num_classes: 1,
            image_size: (32, 32),
            logits: vec![-5.0; 4],
            regs: vec![0.5; 16],
        };
        assert!(decode_and_nms(&pred, ImageId(1), &[CategoryId(3)], (1.0, 1.0), &DecodeConfig::default()).is_empty());
    }

    #[test]
    fn decodes_and_rescales_boxes() {
        let mut logits = vec![-9.0f64; 4];
        logits[3] = 3.0;
        let pred = Predictions { grid_h: 2, grid_w: 2, num_classes: 1, image_size: (32, 32), logits, regs: vec![0.25; 16] };
        let d = decode_and_nms(&pred, ImageId(1), &[CategoryId(3)], (2.0, 2.0), &DecodeConfig::default());
        assert_eq!(d.len(), 1);
        // location (24, 24) +- 4 px, halved
        assert_eq!(d[0].bbox, BBox::new(10.0, 10.0, 4.0, 4.0));
        assert_eq!(d[0].category_id, CategoryId(3));
    }
}
