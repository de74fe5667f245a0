use rayon::prelude::*;

use super::array::Array;
use super::forward::{backward, forward_train, zero_grads, Grads};
use super::loss::{supervised_loss, LossBreakdown, LossConfig};
use super::params::DetectorParams;
use super::targets::LocationTarget;
use crate::error::Result;
use crate::scalar::Scalar;

/// One term of a weighted objective: a batch of images with their targets.
pub struct LossGroup<'a, F> {
    pub images: &'a [Array<F>],
    pub targets: &'a [Vec<LocationTarget>],
    pub weight: f64,
}

/// Evaluate `sum_g weight_g * L(group_g)` and its parameter gradient.
/// Per-image work runs in parallel; gradients are reduced in image order.
pub fn weighted_loss_and_grads<F: Scalar>(
    params: &DetectorParams<F>,
    groups: &[LossGroup<'_, F>],
    loss_cfg: &LossConfig,
    through_representation: bool,
) -> Result<(Vec<LossBreakdown>, Grads<F>)> {
    let mut breakdowns = Vec::with_capacity(groups.len());
    let mut grads = zero_grads(params);
    for g in groups {
        let passes = g
            .images
            .par_iter()
            .map(|img| forward_train(params, img))
            .collect::<Result<Vec<_>>>()?;
        let (preds, caches): (Vec<_>, Vec<_>) = passes.into_iter().unzip();
        let out = supervised_loss(&preds, g.targets, loss_cfg)?.scaled(g.weight);
        breakdowns.push(out.breakdown);
        if g.weight == 0.0 {
            continue;
        }
        let per_image: Vec<Grads<F>> = caches
            .par_iter()
            .zip(out.dlogits.par_iter().zip(out.dregs.par_iter()))
            .map(|(cache, (dl, dr))| {
                let mut local = zero_grads(params);
                backward(params, cache, dl, dr, through_representation, &mut local);
                local
            })
            .collect();
        for local in per_image {
            for (name, g) in local {
                let acc = grads.get_mut(&name).expect("same structure");
                for (a, v) in acc.data.iter_mut().zip(g.data) {
                    *a += v;
                }
            }
        }
    }
    Ok((breakdowns, grads))
}
