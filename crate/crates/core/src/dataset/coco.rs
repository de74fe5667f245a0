//! COCO-format annotation documents.
//!
//! The writer emits keys in a fixed (alphabetical) order with records sorted
//! by id, so `save(load(x))` is byte-identical for any document this crate
//! wrote.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::*;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CocoDocument {
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
    images: Vec<CocoImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    info: Option<CocoInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoInfo {
    role: DatasetRole,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    area: f64,
    bbox: BBox,
    category_id: CategoryId,
    id: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    ignore: bool,
    image_id: ImageId,
    #[serde(default, skip_serializing_if = "is_original")]
    source: InstanceSource,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: CategoryId,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    file_name: String,
    height: u32,
    id: ImageId,
    width: u32,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_original(s: &InstanceSource) -> bool {
    *s == InstanceSource::Original
}

/// Parse a COCO document from a string. `origin` only labels errors.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<DatasetIndex> {
    let doc: CocoDocument = serde_json::from_str(text)
        .map_err(|e| Error::Malformed { path: origin.to_path_buf(), message: e.to_string() })?;
    let role = doc.info.map(|i| i.role).unwrap_or_default();
    let images = doc
        .images
        .into_iter()
        .map(|i| ImageRecord { id: i.id, width: i.width, height: i.height, file_name: i.file_name })
        .collect();
    let annotations = doc
        .annotations
        .into_iter()
        .map(|a| InstanceAnnotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox,
            area: a.area,
            source: a.source,
            ignore: a.ignore,
        })
        .collect();
    let categories = doc.categories.into_iter().map(|c| Category { id: c.id, name: c.name }).collect();
    DatasetIndex::new(images, annotations, categories, role)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn to_coco_string(ds: &DatasetIndex) -> String {
    let doc = CocoDocument {
        annotations: ds
            .annotations()
            .iter()
            .map(|a| CocoAnnotation {
                area: a.area,
                bbox: a.bbox,
                category_id: a.category_id,
                id: a.id,
                ignore: a.ignore,
                image_id: a.image_id,
                source: a.source,
            })
            .collect(),
        categories: ds
            .categories()
            .iter()
            .map(|c| CocoCategory { id: c.id, name: c.name.clone() })
            .collect(),
        images: ds
            .images()
            .iter()
            .map(|i| CocoImage { file_name: i.file_name.clone(), height: i.height, id: i.id, width: i.width })
            .collect(),
        info: (ds.role() == DatasetRole::Unlabeled).then_some(CocoInfo { role: DatasetRole::Unlabeled }),
    };
    let mut s = serde_json::to_string(&doc).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn save_dataset(ds: &DatasetIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_coco_string(ds)).map_err(|e| Error::io(path, e))
}
