//! Checkpoint documents: `{"meta": {...}, "state_dict": {name: array}}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::params::DetectorParams;
use crate::dataset::CategoryId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub num_classes: usize,
    pub stage: String,
    /// Category id of each classifier row, in row order.
    pub class_ids: Vec<CategoryId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub meta: CheckpointMeta,
    pub params: DetectorParams<F>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document<F> {
    meta: CheckpointMeta,
    state_dict: BTreeMap<String, Array<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(stage: &str, class_ids: Vec<CategoryId>, params: DetectorParams<F>) -> Result<Self> {
        if class_ids.len() != params.num_classes {
            return Err(Error::RowCountMismatch { which: "class_ids", rows: params.num_classes, ids: class_ids.len() });
        }
        Ok(Checkpoint { meta: CheckpointMeta { num_classes: params.num_classes, stage: stage.into(), class_ids }, params })
    }

    pub fn to_json(&self) -> String {
        let doc = Document { meta: self.meta.clone(), state_dict: self.params.tensors.clone() };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let doc: Document<F> = serde_json::from_str(text)
            .map_err(|e| Error::Malformed { path: origin.to_path_buf(), message: e.to_string() })?;
        let params = DetectorParams { num_classes: doc.meta.num_classes, tensors: doc.state_dict };
        params.validate()?;
        if doc.meta.class_ids.len() != doc.meta.num_classes {
            return Err(Error::RowCountMismatch {
                which: "class_ids",
                rows: doc.meta.num_classes,
                ids: doc.meta.class_ids.len(),
            });
        }
        Ok(Checkpoint { meta: doc.meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn digest(&self) -> String {
        self.params.digest("")
    }
}
