use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;

use super::types::*;
use crate::error::{Error, Result};

/// In-memory pixel payloads keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelStore {
    images: BTreeMap<ImageId, RgbImage>,
}

impl PixelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ImageId, img: RgbImage) {
        self.images.insert(id, img);
    }

    pub fn get(&self, id: ImageId) -> Result<&RgbImage> {
        self.images
            .get(&id)
            .ok_or_else(|| Error::InvalidDataset(format!("no pixels stored for image {id}")))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn extend(&mut self, other: PixelStore) {
        self.images.extend(other.images);
    }

    /// Write every image of `ds` as PNG under `dir` using its `file_name`.
    pub fn save_dir(&self, ds: &DatasetIndex, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for rec in ds.images() {
            self.get(rec.id)?.save(dir.join(&rec.file_name))?;
        }
        Ok(())
    }

    /// Load the payloads for `ds`, checking declared dimensions.
    pub fn load_dir(ds: &DatasetIndex, dir: &Path) -> Result<PixelStore> {
        let mut store = PixelStore::new();
        for rec in ds.images() {
            let path = dir.join(&rec.file_name);
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            let img = image::open(&path)?.to_rgb8();
            if img.width() != rec.width || img.height() != rec.height {
                return Err(Error::InvalidDataset(format!(
                    "{} is {}x{}, index declares {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                )));
            }
            store.insert(rec.id, img);
        }
        Ok(store)
    }
}
