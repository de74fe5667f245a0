//! Supervised detection loss: per-class sigmoid cross-entropy (optionally
//! focal-modulated) plus L1 box regression.

use serde::{Deserialize, Serialize};

use super::forward::Predictions;
use super::targets::LocationTarget;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub focal: bool,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { focal: false, focal_alpha: 0.25, focal_gamma: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

/// Loss value together with its gradient w.r.t. every image's logits and
/// regressions.
#[derive(Debug, Clone)]
pub struct LossOutput<F> {
    pub breakdown: LossBreakdown,
    pub dlogits: Vec<Vec<F>>,
    pub dregs: Vec<Vec<F>>,
}

impl<F: Scalar> LossOutput<F> {
    /// Scale loss and gradients by `alpha`.
    pub fn scaled(mut self, alpha: f64) -> Self {
        let a = F::lit(alpha);
        self.breakdown.total *= alpha;
        self.breakdown.cls *= alpha;
        self.breakdown.reg *= alpha;
        for g in self.dlogits.iter_mut().chain(self.dregs.iter_mut()) {
            g.iter_mut().for_each(|v| *v *= a);
        }
        self
    }
}

#[inline]
fn softplus<F: Scalar>(z: F) -> F {
    // log(1 + e^z), stable for large |z|
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Element loss and d/dz for one logit against a binary label.
#[inline]
fn binary_term<F: Scalar>(z: F, positive: bool, cfg: &LossConfig) -> (F, F) {
    let p = sigmoid(z);
    if !cfg.focal {
        return if positive { (softplus(-z), p - F::one()) } else { (softplus(z), p) };
    }
    let gamma = F::lit(cfg.focal_gamma);
    let (alpha_t, zt, sign) =
        if positive { (F::lit(cfg.focal_alpha), z, F::one()) } else { (F::lit(1.0 - cfg.focal_alpha), -z, -F::one()) };
    // in terms of the "true-class" probability pt = sigmoid(zt)
    let pt = sigmoid(zt);
    let log_pt = -softplus(-zt);
    let one_m = F::one() - pt;
    let loss = -alpha_t * one_m.powf(gamma) * log_pt;
    let dzt = alpha_t * one_m.powf(gamma) * (gamma * pt * log_pt - one_m);
    (loss, sign * dzt)
}

/// `total = cls + reg`. `cls` sums the per-class binary terms over every
/// non-ignored location of the batch and divides by that location count;
/// `reg` sums `|pred - target|` over the four deltas of positive locations
/// and divides by the positive count (0 when there are none).
pub fn supervised_loss<F: Scalar>(
    preds: &[Predictions<F>],
    targets: &[Vec<LocationTarget>],
    cfg: &LossConfig,
) -> Result<LossOutput<F>> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions vs {} target sets", preds.len(), targets.len())));
    }
    let mut valid = 0usize;
    let mut positives = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.locations() != t.len() {
            return Err(Error::Shape(format!("{} locations vs {} targets", p.locations(), t.len())));
        }
        if !p.all_finite() {
            return Err(Error::NonFinite("predictions".into()));
        }
        for lt in t {
            match lt {
                LocationTarget::Ignore => {}
                LocationTarget::Negative => valid += 1,
                LocationTarget::Positive { class, deltas } => {
                    if *class >= p.num_classes {
                        return Err(Error::Shape(format!("target class {class} >= {}", p.num_classes)));
                    }
                    if deltas.iter().any(|d| !d.is_finite()) {
                        return Err(Error::NonFinite("box targets".into()));
                    }
                    valid += 1;
                    positives += 1;
                }
            }
        }
    }
    let cls_norm = if valid > 0 { F::one() / F::lit(valid as f64) } else { F::zero() };
    let reg_norm = if positives > 0 { F::one() / F::lit(positives as f64) } else { F::zero() };

    let mut cls = F::zero();
    let mut reg = F::zero();
    let mut dlogits = Vec::with_capacity(preds.len());
    let mut dregs = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        let k = p.num_classes;
        let mut dl = vec![F::zero(); p.logits.len()];
        let mut dr = vec![F::zero(); p.regs.len()];
        for (loc, lt) in t.iter().enumerate() {
            let pos_class = match lt {
                LocationTarget::Ignore => continue,
                LocationTarget::Negative => None,
                LocationTarget::Positive { class, .. } => Some(*class),
            };
            for c in 0..k {
                let (l, g) = binary_term(p.logits[loc * k + c], pos_class == Some(c), cfg);
                cls += l;
                dl[loc * k + c] = g * cls_norm;
            }
            if let LocationTarget::Positive { deltas, .. } = lt {
                for j in 0..4 {
                    let diff = p.regs[loc * 4 + j] - F::lit(deltas[j]);
                    reg += diff.abs();
                    let s = if diff > F::zero() {
                        F::one()
                    } else if diff < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                    dr[loc * 4 + j] = s * reg_norm;
                }
            }
        }
        dlogits.push(dl);
        dregs.push(dr);
    }
    let cls = (cls * cls_norm).as_f64();
    let reg = (reg * reg_norm).as_f64();
    let breakdown = LossBreakdown { total: cls + reg, cls, reg };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossOutput { breakdown, dlogits, dregs })
}
