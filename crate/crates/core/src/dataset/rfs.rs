//! Repeat factor sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::stats::count_per_class;
use super::types::*;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Category-level factor `max(1, sqrt(t / f_c))`.
pub fn category_repeat_factor(image_fraction: f64, threshold: f64) -> f64 {
    if image_fraction <= 0.0 {
        return 1.0;
    }
    (threshold / image_fraction).sqrt().max(1.0)
}

/// Image-level factor: the max category factor over classes present in the
/// image, 1 for images without annotations.
pub fn compute_repeat_factors(ds: &DatasetIndex, threshold: f64) -> Result<BTreeMap<ImageId, f64>> {
    ds.require_labeled("repeat factor sampling")?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("RFS threshold must lie in (0, 1), got {threshold}")));
    }
    if ds.images().is_empty() {
        return Err(Error::EmptyDataset("repeat factors need at least one image".into()));
    }
    let n = ds.images().len() as f64;
    let per_class: BTreeMap<CategoryId, f64> = count_per_class(ds)
        .into_iter()
        .map(|(id, (m, _))| (id, category_repeat_factor(m as f64 / n, threshold)))
        .collect();
    Ok(ds
        .images()
        .iter()
        .map(|img| {
            let r = ds
                .annotations_for(img.id)
                .filter(|a| !a.ignore)
                .map(|a| per_class[&a.category_id])
                .fold(1.0, f64::max);
            (img.id, r)
        })
        .collect())
}

const EXPAND_STREAM: u64 = 0x5246_5331;

/// One epoch of image ids: each image `floor(r)` times plus one with
/// probability `frac(r)`, then shuffled.
pub fn expand_epoch_indices(factors: &BTreeMap<ImageId, f64>, seed: u64) -> Vec<ImageId> {
    let mut rng = rng_for(seed, &[EXPAND_STREAM]);
    let mut out = Vec::with_capacity(factors.len());
    for (&id, &r) in factors {
        let whole = r.floor();
        let mut reps = whole as usize;
        if rng.random::<f64>() < r - whole {
            reps += 1;
        }
        out.extend(std::iter::repeat_n(id, reps));
    }
    out.shuffle(&mut rng);
    out
}
