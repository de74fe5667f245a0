use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::types::*;
use crate::error::Result;
use crate::rng::rng_for;

/// Per-class instance selection; `selected[c]` lists annotation ids ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotSample {
    pub k: usize,
    pub seed: u64,
    pub selected: BTreeMap<CategoryId, Vec<u64>>,
}

const KSHOT_STREAM: u64 = 0x4b53_484f;

/// Draw `min(k, available)` instances per class uniformly without
/// replacement. The returned dataset holds the images owning a selected
/// instance; every other instance in those images becomes an ignore region.
/// `k = usize::MAX` selects everything.
pub fn sample_k_shot(ds: &DatasetIndex, k: usize, seed: u64) -> Result<(DatasetIndex, KShotSample)> {
    ds.require_labeled("k-shot sampling")?;
    let mut by_class: BTreeMap<CategoryId, Vec<u64>> =
        ds.categories().iter().map(|c| (c.id, Vec::new())).collect();
    for a in ds.annotations().iter().filter(|a| !a.ignore) {
        by_class.entry(a.category_id).or_default().push(a.id);
    }
    let mut selected = BTreeMap::new();
    for (cat, mut ids) in by_class {
        ids.sort_unstable();
        let mut rng = rng_for(seed, &[KSHOT_STREAM, cat.0 as u64]);
        ids.shuffle(&mut rng);
        ids.truncate(k.min(ids.len()));
        ids.sort_unstable();
        selected.insert(cat, ids);
    }
    let chosen: BTreeSet<u64> = selected.values().flatten().copied().collect();
    let images: BTreeSet<ImageId> = ds
        .annotations()
        .iter()
        .filter(|a| chosen.contains(&a.id))
        .map(|a| a.image_id)
        .collect();
    let annotations = ds
        .annotations()
        .iter()
        .filter(|a| images.contains(&a.image_id))
        .map(|a| {
            let mut a = a.clone();
            a.ignore = a.ignore || !chosen.contains(&a.id);
            a
        })
        .collect();
    let image_records = ds.images().iter().filter(|i| images.contains(&i.id)).cloned().collect();
    let dk = DatasetIndex::new(image_records, annotations, ds.categories().to_vec(), ds.role())?;
    Ok((dk, KShotSample { k, seed, selected }))
}
