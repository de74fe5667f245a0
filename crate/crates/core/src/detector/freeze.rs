use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::params::{DetectorParams, REPRESENTATION};
use crate::error::{Error, Result};

/// Parameters whose name starts with one of `trainable` are updated; all
/// others stay bit-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub trainable: Vec<String>,
}

impl FreezePolicy {
    pub fn everything() -> Self {
        FreezePolicy { trainable: vec!["representation".into(), "detector".into()] }
    }

    /// Only the classifier and box regressor learn.
    pub fn head_only() -> Self {
        FreezePolicy { trainable: vec!["detector.classifier".into(), "detector.regressor".into()] }
    }

    pub fn nothing() -> Self {
        FreezePolicy { trainable: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamPartition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

impl ParamPartition {
    pub fn representation_trainable(&self) -> bool {
        self.trainable.iter().any(|n| n.starts_with(REPRESENTATION))
    }

    pub fn any_trainable(&self) -> bool {
        !self.trainable.is_empty()
    }
}

pub fn apply_freeze_policy<F>(params: &DetectorParams<F>, policy: &FreezePolicy) -> Result<ParamPartition> {
    for prefix in &policy.trainable {
        if !params.tensors.keys().any(|n| n.starts_with(prefix.as_str())) {
            return Err(Error::UnmatchedPrefix(prefix.clone()));
        }
    }
    let (trainable, frozen) = params
        .tensors
        .keys()
        .cloned()
        .partition(|n| policy.trainable.iter().any(|p| n.starts_with(p.as_str())));
    Ok(ParamPartition { trainable, frozen })
}
