use image::{Rgb, RgbImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AugOp, AugmentedSample};
use crate::dataset::{pixel_rect, BankEntry, BBox, CategoryId, ImageId, InstanceAnnotation, InstanceSource};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A hard-pasted rectangular patch; `pixels` is packed RGB, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteItem {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub category_id: CategoryId,
    pub source_annotation: u64,
    pub pixels: Vec<u8>,
}

impl PasteItem {
    fn from_patch(patch: &RgbImage, x: u32, y: u32, category_id: CategoryId, source_annotation: u64) -> Self {
        PasteItem {
            x,
            y,
            width: patch.width(),
            height: patch.height(),
            category_id,
            source_annotation,
            pixels: patch.as_raw().clone(),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.width as f64, self.height as f64)
    }

    pub(crate) fn draw(&self, img: &mut RgbImage) {
        for dy in 0..self.height {
            for dx in 0..self.width {
                let (tx, ty) = (self.x + dx, self.y + dy);
                if tx < img.width() && ty < img.height() {
                    let i = 3 * (dy * self.width + dx) as usize;
                    img.put_pixel(tx, ty, Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]));
                }
            }
        }
    }

    fn covers(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopyPasteConfig {
    /// Probability that each source instance is pasted.
    pub select_prob: f64,
    /// Destination instances occluded above this fraction become ignore regions.
    pub occlusion_ignore: f64,
}

impl Default for CopyPasteConfig {
    fn default() -> Self {
        CopyPasteConfig { select_prob: 0.5, occlusion_ignore: 0.7 }
    }
}

fn occluded_fraction(b: &BBox, width: u32, height: u32, items: &[PasteItem]) -> f64 {
    let (x0, y0, w, h) = pixel_rect(b, width, height);
    if w == 0 || h == 0 || items.is_empty() {
        return 0.0;
    }
    let mut covered = 0usize;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            if items.iter().any(|it| it.covers(x, y)) {
                covered += 1;
            }
        }
    }
    covered as f64 / (w * h) as f64
}

pub(crate) fn apply_copy_paste(
    image_id: ImageId,
    img: &mut RgbImage,
    anns: &mut Vec<InstanceAnnotation>,
    items: &[PasteItem],
    occlusion_ignore: f64,
) {
    let (w, h) = img.dimensions();
    for it in items {
        it.draw(img);
    }
    for a in anns.iter_mut().filter(|a| !a.ignore) {
        if occluded_fraction(&a.bbox, w, h, items) > occlusion_ignore {
            a.ignore = true;
        }
    }
    let mut next_id = anns.iter().map(|a| a.id + 1).max().unwrap_or(1);
    for (i, it) in items.iter().enumerate() {
        let bbox = it.bbox();
        let ignore = occluded_fraction(&bbox, w, h, &items[i + 1..]) > occlusion_ignore;
        anns.push(InstanceAnnotation {
            id: next_id,
            image_id,
            category_id: it.category_id,
            bbox,
            area: bbox.area(),
            source: InstanceSource::Pasted,
            ignore,
        });
        next_id += 1;
    }
}

/// Paste a random subset of `src` instances into `dst` at random positions.
pub fn simple_copy_paste(
    dst: &AugmentedSample,
    src: &AugmentedSample,
    cfg: &CopyPasteConfig,
    rng: &mut Rng,
) -> AugmentedSample {
    let (dw, dh) = dst.size();
    let (sw, sh) = src.size();
    let mut items = Vec::new();
    for a in src.annotations.iter().filter(|a| !a.ignore) {
        if !rng.random_bool(cfg.select_prob) {
            continue;
        }
        let (x0, y0, w, h) = pixel_rect(&a.bbox, sw, sh);
        if w == 0 || h == 0 || w > dw || h > dh {
            continue;
        }
        let patch = image::imageops::crop_imm(&src.pixels, x0, y0, w, h).to_image();
        let x = rng.random_range(0..=dw - w);
        let y = rng.random_range(0..=dh - h);
        items.push(PasteItem::from_patch(&patch, x, y, a.category_id, a.id));
    }
    let mut out = dst.clone();
    if !items.is_empty() {
        out.push(AugOp::CopyPaste { items, occlusion_ignore: cfg.occlusion_ignore });
    }
    out
}

const PLACEMENT_TRIES: usize = 50;
const MAX_PASTE_IOU: f64 = 0.3;

/// Paste `n ~ U[count_range]` bank entries onto an unlabeled image. The paste
/// boxes are kept in the op log only; no annotations are produced.
pub fn paste_rare_instances(
    image_id: ImageId,
    img: &RgbImage,
    bank: &[BankEntry],
    count_range: (u32, u32),
    rng: &mut Rng,
) -> Result<AugmentedSample> {
    if bank.is_empty() {
        return Err(Error::EmptyDataset("rare instance bank is empty".into()));
    }
    if count_range.0 > count_range.1 {
        return Err(Error::InvalidArgument("paste count range must be ordered".into()));
    }
    let (w, h) = img.dimensions();
    let n = rng.random_range(count_range.0..=count_range.1);
    let mut items: Vec<PasteItem> = Vec::new();
    for _ in 0..n {
        let entry = &bank[rng.random_range(0..bank.len())];
        let (pw, ph) = entry.patch.dimensions();
        if pw == 0 || ph == 0 || pw > w || ph > h {
            continue;
        }
        for _ in 0..PLACEMENT_TRIES {
            let x = rng.random_range(0..=w - pw);
            let y = rng.random_range(0..=h - ph);
            let b = BBox::new(x as f64, y as f64, pw as f64, ph as f64);
            if items.iter().all(|it| it.bbox().iou(&b) <= MAX_PASTE_IOU) {
                items.push(PasteItem::from_patch(&entry.patch, x, y, entry.category_id, entry.annotation_id));
                break;
            }
        }
    }
    let mut out = AugmentedSample::new(image_id, img.clone(), Vec::new());
    if !items.is_empty() {
        out.push(AugOp::RarePaste { items });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn ann(id: u64, b: BBox) -> InstanceAnnotation {
        InstanceAnnotation {
            id,
            image_id: ImageId(1),
            category_id: CategoryId(2),
            bbox: b,
            area: b.area(),
            source: InstanceSource::Original,
            ignore: false,
        }
    }

    fn canvas(v: u8) -> RgbImage {
        RgbImage::from_fn(64, 64, |x, y| Rgb([v, x as u8, y as u8]))
    }

    #[test]
    fn empty_selection_is_noop() {
        let dst = AugmentedSample::new(ImageId(1), canvas(1), vec![ann(1, BBox::new(5.0, 5.0, 10.0, 10.0))]);
        let src = AugmentedSample::new(ImageId(2), canvas(2), vec![ann(1, BBox::new(0.0, 0.0, 20.0, 20.0))]);
        let cfg = CopyPasteConfig { select_prob: 0.0, ..Default::default() };
        assert_eq!(simple_copy_paste(&dst, &src, &cfg, &mut rng_for(0, &[])), dst);
    }

    #[test]
    fn single_paste_adds_exact_annotation_and_pixels() {
        let dst = AugmentedSample::new(ImageId(1), canvas(1), vec![]);
        let src = AugmentedSample::new(ImageId(2), canvas(200), vec![ann(9, BBox::new(3.0, 4.0, 20.0, 20.0))]);
        let cfg = CopyPasteConfig { select_prob: 1.0, ..Default::default() };
        let out = simple_copy_paste(&dst, &src, &cfg, &mut rng_for(5, &[]));
        assert_eq!(out.annotations.len(), 1);
        let a = &out.annotations[0];
        assert_eq!((a.bbox.w, a.bbox.h), (20.0, 20.0));
        assert_eq!(a.source, InstanceSource::Pasted);
        let (px, py) = (a.bbox.x as u32, a.bbox.y as u32);
        for dy in 0..20 {
            for dx in 0..20 {
                assert_eq!(out.pixels.get_pixel(px + dx, py + dy), src.pixels.get_pixel(3 + dx, 4 + dy));
            }
        }
    }

    #[test]
    fn heavy_occlusion_becomes_ignore() {
        let mut anns = vec![ann(1, BBox::new(10.0, 10.0, 10.0, 10.0)), ann(2, BBox::new(40.0, 40.0, 10.0, 10.0))];
        let patch = RgbImage::new(9, 9);
        let items = [PasteItem::from_patch(&patch, 10, 10, CategoryId(3), 7)];
        let mut img = canvas(0);
        apply_copy_paste(ImageId(1), &mut img, &mut anns, &items, 0.7);
        assert!(anns[0].ignore); // 81% covered
        assert!(!anns[1].ignore);
        assert_eq!(anns[2].id, 3);
    }

    #[test]
    fn rare_paste_counts() {
        let bank = vec![BankEntry {
            category_id: CategoryId(4),
            annotation_id: 1,
            patch: RgbImage::from_pixel(12, 12, Rgb([255, 0, 0])),
            bbox_size: (12.0, 12.0),
        }];
        let img = canvas(9);
        let none = paste_rare_instances(ImageId(1), &img, &bank, (0, 0), &mut rng_for(0, &[])).unwrap();
        assert_eq!(none.pixels, img);
        assert!(none.op_log.is_empty());
        let three = paste_rare_instances(ImageId(1), &img, &bank, (3, 3), &mut rng_for(0, &[])).unwrap();
        assert!(three.annotations.is_empty());
        match &three.op_log[..] {
            [AugOp::RarePaste { items }] => assert_eq!(items.len(), 3),
            other => panic!("{other:?}"),
        }
        assert!(paste_rare_instances(ImageId(1), &img, &[], (1, 1), &mut rng_for(0, &[])).is_err());
    }
}
