use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyBin {
    Rare,
    Common,
    Frequent,
}

/// Image-count thresholds: `<= rare_max` is rare, `<= common_max` common,
/// otherwise frequent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinThresholds {
    pub rare_max: usize,
    pub common_max: usize,
}

impl BinThresholds {
    /// The LVIS convention: rare 1-10 images, common 11-100, frequent > 100.
    pub const LVIS: BinThresholds = BinThresholds { rare_max: 10, common_max: 100 };

    pub fn bin(&self, image_count: usize) -> FrequencyBin {
        if image_count <= self.rare_max {
            FrequencyBin::Rare
        } else if image_count <= self.common_max {
            FrequencyBin::Common
        } else {
            FrequencyBin::Frequent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category_id: CategoryId,
    pub image_count: usize,
    pub instance_count: usize,
    pub frequency_bin: FrequencyBin,
}

/// Distinct-image and instance counts per class; ignore regions are not counted.
pub(crate) fn count_per_class(ds: &DatasetIndex) -> BTreeMap<CategoryId, (usize, usize)> {
    let mut images: BTreeMap<CategoryId, BTreeSet<ImageId>> = BTreeMap::new();
    let mut instances: BTreeMap<CategoryId, usize> = BTreeMap::new();
    for a in ds.annotations().iter().filter(|a| !a.ignore) {
        images.entry(a.category_id).or_default().insert(a.image_id);
        *instances.entry(a.category_id).or_default() += 1;
    }
    ds.categories()
        .iter()
        .map(|c| {
            let m = images.get(&c.id).map_or(0, |s| s.len());
            let n = instances.get(&c.id).copied().unwrap_or(0);
            (c.id, (m, n))
        })
        .collect()
}

/// One record per vocabulary class, ordered by category id.
pub fn compute_category_stats(ds: &DatasetIndex, bins: BinThresholds) -> Vec<CategoryStats> {
    count_per_class(ds)
        .into_iter()
        .map(|(category_id, (image_count, instance_count))| CategoryStats {
            category_id,
            image_count,
            instance_count,
            frequency_bin: bins.bin(image_count),
        })
        .collect()
}

pub fn bin_map(stats: &[CategoryStats]) -> BTreeMap<CategoryId, FrequencyBin> {
    stats.iter().map(|s| (s.category_id, s.frequency_bin)).collect()
}

/// Lower median of per-class image counts.
pub fn median_image_count(stats: &[CategoryStats]) -> usize {
    let mut counts: Vec<usize> = stats.iter().map(|s| s.image_count).collect();
    counts.sort_unstable();
    if counts.is_empty() {
        0
    } else {
        counts[(counts.len() - 1) / 2]
    }
}
