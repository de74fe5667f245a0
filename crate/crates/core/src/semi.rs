//! Student-teacher training: an EMA teacher labels weak views of unlabeled
//! images and the student learns those pseudo targets on strong views.

use serde::{Deserialize, Serialize};

use crate::augment::{map_box_forward, map_box_inverse, AugmentedSample};
use crate::dataset::{BBox, CategoryId};
use crate::detector::{
    assign_targets, decode_and_nms, forward_image, grid_for, image_to_tensor, supervised_loss, weighted_loss_and_grads,
    Array, DecodeConfig, DetectorParams, LocationTarget, LossBreakdown, LossConfig, LossGroup, LossOutput,
    ParamPartition, Predictions, Sgd, TargetBox,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct TeacherState<F> {
    pub params: DetectorParams<F>,
    pub momentum: f64,
}

impl<F: Scalar> TeacherState<F> {
    pub fn new(student: &DetectorParams<F>, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("EMA momentum must lie in [0, 1], got {momentum}")));
        }
        Ok(TeacherState { params: student.clone(), momentum })
    }
}

/// `theta_T <- m * theta_T + (1 - m) * theta_S` for every tensor.
pub fn ema_update<F: Scalar>(teacher: &mut TeacherState<F>, student: &DetectorParams<F>) -> Result<()> {
    teacher.params.same_structure(student)?;
    if teacher.momentum == 0.0 {
        teacher.params = student.clone();
        return Ok(());
    }
    // written as an increment so that equal inputs are a fixed point
    let one_m = F::lit(1.0 - teacher.momentum);
    for (name, t) in teacher.params.tensors.iter_mut() {
        let s = student.get(name);
        for (tv, &sv) in t.data.iter_mut().zip(&s.data) {
            *tv += one_m * (sv - *tv);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoTarget {
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub score: f64,
}

/// Teacher detections at or above `tau` on each weak view, in that view's frame.
pub fn generate_pseudo_labels<F: Scalar>(
    teacher: &DetectorParams<F>,
    class_ids: &[CategoryId],
    weak_views: &[AugmentedSample],
    tau: f64,
    decode: &DecodeConfig,
) -> Result<Vec<Vec<PseudoTarget>>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("pseudo-label threshold must lie in (0, 1], got {tau}")));
    }
    let cfg = DecodeConfig { score_thresh: decode.score_thresh.min(tau), ..*decode };
    weak_views
        .iter()
        .map(|v| {
            let pred = forward_image(teacher, &image_to_tensor::<F>(&v.pixels))?;
            Ok(decode_and_nms(&pred, v.image_id, class_ids, (1.0, 1.0), &cfg)
                .into_iter()
                .filter(|d| d.score >= tau)
                .map(|d| PseudoTarget { bbox: d.bbox, category_id: d.category_id, score: d.score })
                .collect())
        })
        .collect()
}

/// Carry pseudo boxes from the weak view's frame into the strong view's
/// frame (both views derive from the same base image). Boxes dropped by a
/// geometric op disappear.
pub fn map_pseudo_targets(targets: &[PseudoTarget], weak: &AugmentedSample, strong: &AugmentedSample) -> Vec<PseudoTarget> {
    targets
        .iter()
        .filter_map(|t| {
            let base = map_box_inverse(&weak.op_log, &t.bbox)?;
            let bbox = map_box_forward(&strong.op_log, &base)?;
            Some(PseudoTarget { bbox, ..*t })
        })
        .collect()
}

/// Location targets for an image of `(height, width)` with pseudo boxes.
pub fn pseudo_location_targets(
    targets: &[PseudoTarget],
    class_ids: &[CategoryId],
    size: (usize, usize),
    center_radius: f64,
) -> Vec<LocationTarget> {
    let boxes: Vec<TargetBox> = targets
        .iter()
        .filter_map(|t| class_ids.binary_search(&t.category_id).ok().map(|class| TargetBox { bbox: t.bbox, class }))
        .collect();
    assign_targets(&boxes, grid_for(size.0, size.1), &[], center_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CombinedBreakdown {
    pub total: f64,
    pub sup: LossBreakdown,
    pub pseudo: LossBreakdown,
}

/// `L = L_sup + alpha * L_pseudo`, both with the supervised functional form.
/// Returns the breakdown (with `pseudo` unscaled) and the two gradient sets.
pub fn combined_loss<F: Scalar>(
    labeled: &[Predictions<F>],
    labeled_targets: &[Vec<LocationTarget>],
    strong: &[Predictions<F>],
    pseudo_targets: &[Vec<LocationTarget>],
    alpha: f64,
    cfg: &LossConfig,
) -> Result<(CombinedBreakdown, LossOutput<F>, LossOutput<F>)> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let sup = supervised_loss(labeled, labeled_targets, cfg)?;
    let pseudo = supervised_loss(strong, pseudo_targets, cfg)?;
    let total = sup.breakdown.total + alpha * pseudo.breakdown.total;
    if !total.is_finite() {
        return Err(Error::NonFinite("combined loss".into()));
    }
    let breakdown = CombinedBreakdown { total, sup: sup.breakdown, pseudo: pseudo.breakdown };
    Ok((breakdown, sup, pseudo.scaled(alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiStepConfig {
    pub tau: f64,
    pub alpha: f64,
    pub center_radius: f64,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
}

/// A weak/strong view pair of one unlabeled image.
pub struct UnlabeledPair {
    pub weak: AugmentedSample,
    pub strong: AugmentedSample,
}

#[derive(Debug, Clone, Default)]
pub struct SemiStepOutput {
    pub breakdown: CombinedBreakdown,
    /// Pseudo labels per unlabeled image, in the strong view's frame.
    pub pseudo: Vec<Vec<PseudoTarget>>,
    pub grad_norm: f64,
}

/// One student update with the compound objective followed by the teacher's
/// EMA update. The teacher is only read before the update.
#[allow(clippy::too_many_arguments)]
pub fn semi_train_step<F: Scalar>(
    student: &mut DetectorParams<F>,
    optimizer: &mut Sgd<F>,
    teacher: &mut TeacherState<F>,
    labeled_images: &[Array<F>],
    labeled_targets: &[Vec<LocationTarget>],
    unlabeled: &[UnlabeledPair],
    class_ids: &[CategoryId],
    cfg: &SemiStepConfig,
    partition: &ParamPartition,
    lr: f64,
) -> Result<SemiStepOutput> {
    let mut pseudo = Vec::new();
    let mut strong_images = Vec::new();
    let mut strong_targets = Vec::new();
    if cfg.alpha > 0.0 && !unlabeled.is_empty() {
        let weak: Vec<AugmentedSample> = unlabeled.iter().map(|p| p.weak.clone()).collect();
        let raw = generate_pseudo_labels(&teacher.params, class_ids, &weak, cfg.tau, &cfg.decode)?;
        for (pair, t) in unlabeled.iter().zip(raw) {
            let mapped = map_pseudo_targets(&t, &pair.weak, &pair.strong);
            let img = image_to_tensor::<F>(&pair.strong.pixels);
            let size = (img.shape[1], img.shape[2]);
            strong_targets.push(pseudo_location_targets(&mapped, class_ids, size, cfg.center_radius));
            strong_images.push(img);
            pseudo.push(mapped);
        }
    }
    let groups = [
        LossGroup { images: labeled_images, targets: labeled_targets, weight: 1.0 },
        LossGroup { images: &strong_images, targets: &strong_targets, weight: cfg.alpha },
    ];
    let n_groups = if strong_images.is_empty() { 1 } else { 2 };
    let (parts, grads) = weighted_loss_and_grads(student, &groups[..n_groups], &cfg.loss, partition.representation_trainable())?;
    let sup = parts[0];
    let pseudo_part = parts.get(1).copied().unwrap_or_default();
    let unscale = |x: f64| if cfg.alpha > 0.0 { x / cfg.alpha } else { 0.0 };
    let breakdown = CombinedBreakdown {
        total: sup.total + pseudo_part.total,
        sup,
        pseudo: LossBreakdown { total: unscale(pseudo_part.total), cls: unscale(pseudo_part.cls), reg: unscale(pseudo_part.reg) },
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("semi-supervised loss".into()));
    }
    let grad_norm = optimizer.step(student, &grads, partition, lr);
    ema_update(teacher, student)?;
    Ok(SemiStepOutput { breakdown, pseudo, grad_norm })
}
