use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels with a top-left origin.
/// Serializes as the COCO `[x, y, w, h]` array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox { x: v[0], y: v[1], w: v[2], h: v[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x: x1, y: y1, w: x2 - x1, h: y2 - y1 }
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = self.x2().min(other.x2()) - self.x.max(other.x);
        let ih = self.y2().min(other.y2()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing survives.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x1 = self.x.clamp(0.0, width);
        let y1 = self.y.clamp(0.0, height);
        let x2 = self.x2().clamp(0.0, width);
        let y2 = self.y2().clamp(0.0, height);
        let b = BBox::from_corners(x1, y1, x2, y2);
        b.is_valid().then_some(b)
    }

    /// Intersection over union; 0 when both boxes are empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x2() && py >= self.y && py <= self.y2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceSource {
    #[default]
    Original,
    Pasted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub id: u64,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub area: f64,
    pub source: InstanceSource,
    /// Ignore regions are excluded from both positive and negative assignment.
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    #[default]
    Labeled,
    Unlabeled,
}

/// An immutable, validated detection dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    images: Vec<ImageRecord>,
    annotations: Vec<InstanceAnnotation>,
    categories: Vec<Category>,
    role: DatasetRole,
    image_pos: BTreeMap<ImageId, usize>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
}

impl DatasetIndex {
    /// Validates and indexes. Images, annotations and categories are stored
    /// sorted by id; annotation boxes are clipped to their image.
    pub fn new(
        mut images: Vec<ImageRecord>,
        mut annotations: Vec<InstanceAnnotation>,
        mut categories: Vec<Category>,
        role: DatasetRole,
    ) -> Result<Self> {
        images.sort_by_key(|i| i.id);
        annotations.sort_by_key(|a| a.id);
        categories.sort_by_key(|c| c.id);

        for w in categories.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::InvalidDataset(format!("duplicate category id {}", w[0].id)));
            }
        }
        for w in images.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::InvalidDataset(format!("duplicate image id {}", w[0].id)));
            }
        }
        for w in annotations.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::InvalidDataset(format!("duplicate annotation id {}", w[0].id)));
            }
        }
        if role == DatasetRole::Unlabeled && !annotations.is_empty() {
            return Err(Error::InvalidDataset(
                "unlabeled dataset must not carry annotations".into(),
            ));
        }

        let mut image_pos = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(Error::InvalidDataset(format!("image {} has zero size", img.id)));
            }
            image_pos.insert(img.id, i);
        }
        let vocab: BTreeSet<CategoryId> = categories.iter().map(|c| c.id).collect();
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (i, ann) in annotations.iter_mut().enumerate() {
            let Some(&pos) = image_pos.get(&ann.image_id) else {
                return Err(Error::DanglingImage { annotation_id: ann.id, image_id: ann.image_id.0 });
            };
            if !vocab.contains(&ann.category_id) {
                return Err(Error::UnknownCategory {
                    annotation_id: ann.id,
                    category_id: ann.category_id.0,
                });
            }
            if !ann.bbox.is_valid() {
                return Err(Error::InvalidDataset(format!(
                    "annotation {} has a degenerate box {:?}",
                    ann.id, ann.bbox
                )));
            }
            let img = &images[pos];
            ann.bbox = ann.bbox.clip(img.width as f64, img.height as f64).ok_or_else(|| {
                Error::InvalidDataset(format!("annotation {} lies outside image {}", ann.id, img.id))
            })?;
            by_image.entry(ann.image_id).or_default().push(i);
        }
        Ok(DatasetIndex { images, annotations, categories, role, image_pos, by_image })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[InstanceAnnotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_ids(&self) -> Vec<CategoryId> {
        self.categories.iter().map(|c| c.id).collect()
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotations_for(&self, id: ImageId) -> impl Iterator<Item = &InstanceAnnotation> {
        self.by_image
            .get(&id)
            .into_iter()
            .flat_map(move |v| v.iter().map(move |&i| &self.annotations[i]))
    }

    pub(crate) fn require_labeled(&self, what: &str) -> Result<()> {
        if self.role != DatasetRole::Labeled {
            return Err(Error::InvalidArgument(format!("{what} requires a labeled dataset")));
        }
        Ok(())
    }

    /// Sub-dataset restricted to `keep` classes: every image with at least one
    /// kept annotation, annotations filtered to kept classes.
    pub fn filter_classes(&self, keep: &BTreeSet<CategoryId>) -> Result<DatasetIndex> {
        let annotations: Vec<InstanceAnnotation> = self
            .annotations
            .iter()
            .filter(|a| keep.contains(&a.category_id))
            .cloned()
            .collect();
        let with_objects: BTreeSet<ImageId> =
            annotations.iter().filter(|a| !a.ignore).map(|a| a.image_id).collect();
        let annotations = annotations.into_iter().filter(|a| with_objects.contains(&a.image_id)).collect();
        let images = self.images.iter().filter(|i| with_objects.contains(&i.id)).cloned().collect();
        let categories = self.categories.iter().filter(|c| keep.contains(&c.id)).cloned().collect();
        DatasetIndex::new(images, annotations, categories, self.role)
    }
}
