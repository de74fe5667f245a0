use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::forward::Grads;
use super::freeze::ParamPartition;
use super::params::DetectorParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Fraction of iterations spent in linear warm-up.
    pub warmup_fraction: f64,
    /// Training fractions at which the rate is multiplied by `decay_gamma`;
    /// values at or above 1 never fire.
    pub decay_at: [f64; 2],
    pub decay_gamma: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9, weight_decay: 1e-4, clip_norm: 10.0, warmup_fraction: 0.05, decay_at: [0.67, 0.89], decay_gamma: 0.1 }
    }
}

/// Learning rate at `iter` of `total`: linear warm-up over the first
/// `warmup_fraction` of steps, then step decay at each `decay_at` fraction.
pub fn lr_at(base: f64, iter: usize, total: usize, cfg: &SgdConfig) -> f64 {
    let warm = (total as f64 * cfg.warmup_fraction).round() as usize;
    if warm > 0 && iter < warm {
        return base * (iter + 1) as f64 / warm as f64;
    }
    let decays = cfg.decay_at.iter().filter(|&&f| f < 1.0 && iter >= (total as f64 * f).round() as usize).count();
    base * cfg.decay_gamma.powi(decays as i32)
}

/// SGD with momentum over the trainable part of a parameter set.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub cfg: SgdConfig,
    velocity: BTreeMap<String, Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd { cfg, velocity: BTreeMap::new() }
    }

    /// Apply one update; frozen tensors are never touched. Returns the
    /// pre-clip gradient norm over trainable tensors.
    pub fn step(&mut self, params: &mut DetectorParams<F>, grads: &Grads<F>, partition: &ParamPartition, lr: f64) -> f64 {
        let norm = partition
            .trainable
            .iter()
            .filter_map(|n| grads.get(n))
            .flat_map(|g| g.data.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm { self.cfg.clip_norm / norm } else { 1.0 };
        let (clip, lr) = (F::lit(clip), F::lit(lr));
        let (mom, wd) = (F::lit(self.cfg.momentum), F::lit(self.cfg.weight_decay));
        for name in &partition.trainable {
            let Some(g) = grads.get(name) else { continue };
            let p = params.tensors.get_mut(name).expect("trainable tensor exists");
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![F::zero(); p.data.len()]);
            for ((w, gv), vv) in p.data.iter_mut().zip(&g.data).zip(v.iter_mut()) {
                let d = *gv * clip + wd * *w;
                *vv = mom * *vv + d;
                *w -= lr * *vv;
            }
        }
        norm
    }
}
