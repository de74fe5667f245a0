use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::stats::count_per_class;
use super::types::*;
use crate::error::{Error, Result};

/// Head/tail split of a vocabulary at image-count threshold `threshold_m`.
/// Both id lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub threshold_m: usize,
    pub head_ids: Vec<CategoryId>,
    pub tail_ids: Vec<CategoryId>,
}

impl PartitionSpec {
    pub fn all_ids(&self) -> Vec<CategoryId> {
        let mut all: Vec<CategoryId> = self.head_ids.iter().chain(&self.tail_ids).copied().collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub head: DatasetIndex,
    pub tail: DatasetIndex,
    pub spec: PartitionSpec,
    /// Set when one side is empty; the split is still usable.
    pub warning: Option<String>,
}

/// Split the vocabulary only, without materializing the subsets.
pub fn partition_spec(ds: &DatasetIndex, threshold_m: usize) -> Result<PartitionSpec> {
    ds.require_labeled("partition")?;
    let mut head_ids = Vec::new();
    let mut tail_ids = Vec::new();
    for (id, (image_count, _)) in count_per_class(ds) {
        if image_count <= threshold_m {
            tail_ids.push(id);
        } else {
            head_ids.push(id);
        }
    }
    Ok(PartitionSpec { threshold_m, head_ids, tail_ids })
}

/// Classes seen in at most `threshold_m` images form the tail. Images holding
/// both head and tail objects appear in both subsets with class-filtered labels.
pub fn partition_head_tail(ds: &DatasetIndex, threshold_m: usize) -> Result<Partition> {
    let spec = partition_spec(ds, threshold_m)?;
    let head_set: BTreeSet<CategoryId> = spec.head_ids.iter().copied().collect();
    let tail_set: BTreeSet<CategoryId> = spec.tail_ids.iter().copied().collect();
    let head = ds.filter_classes(&head_set)?;
    let tail = ds.filter_classes(&tail_set)?;
    let warning = match (spec.head_ids.is_empty(), spec.tail_ids.is_empty()) {
        (true, true) => Some("empty vocabulary: both head and tail are empty".to_string()),
        (true, false) => Some(format!("M = {threshold_m} leaves the head split empty")),
        (false, true) => Some(format!("M = {threshold_m} leaves the tail split empty")),
        _ => None,
    };
    Ok(Partition { head, tail, spec, warning })
}

/// Both lists strictly ascending and sharing no id.
pub fn check_sorted_disjoint(head: &[CategoryId], tail: &[CategoryId]) -> Result<()> {
    if head.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedIds("head_ids"));
    }
    if tail.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedIds("tail_ids"));
    }
    let head_set: BTreeSet<_> = head.iter().collect();
    if let Some(dup) = tail.iter().find(|t| head_set.contains(t)) {
        return Err(Error::OverlappingIds(dup.0));
    }
    Ok(())
}
