use image::{imageops, RgbImage};

use super::store::PixelStore;
use super::types::*;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BankEntry {
    pub category_id: CategoryId,
    pub annotation_id: u64,
    pub patch: RgbImage,
    /// `(w, h)` of the source box.
    pub bbox_size: (f64, f64),
}

/// Integer pixel rectangle `(x0, y0, w, h)` covering `b`, clipped to the image.
pub fn pixel_rect(b: &BBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let x0 = b.x.floor().max(0.0) as u32;
    let y0 = b.y.floor().max(0.0) as u32;
    let x1 = (b.x2().ceil() as u32).min(width);
    let y1 = (b.y2().ceil() as u32).min(height);
    (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
}

pub fn crop_box(img: &RgbImage, b: &BBox) -> RgbImage {
    let (x, y, w, h) = pixel_rect(b, img.width(), img.height());
    imageops::crop_imm(img, x, y, w, h).to_image()
}

/// One entry per (non-ignored) tail instance, holding its axis-aligned crop.
pub fn build_rare_instance_bank(tail: &DatasetIndex, store: &PixelStore) -> Result<Vec<BankEntry>> {
    let bank: Vec<BankEntry> = tail
        .annotations()
        .iter()
        .filter(|a| !a.ignore)
        .map(|a| {
            Ok(BankEntry {
                category_id: a.category_id,
                annotation_id: a.id,
                patch: crop_box(store.get(a.image_id)?, &a.bbox),
                bbox_size: (a.bbox.w, a.bbox.h),
            })
        })
        .collect::<Result<_>>()?;
    if bank.is_empty() {
        return Err(Error::EmptyDataset("tail dataset has no instances to bank".into()));
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::*;
    use image::Rgb;

    #[test]
    fn one_entry_per_instance_with_box_sized_patches() {
        let ds = dataset(&[(1, 1, 1), (2, 1, 2), (3, 2, 2)], &[1, 2]);
        let mut store = PixelStore::new();
        for img in ds.images() {
            store.insert(img.id, RgbImage::from_fn(100, 50, |x, y| Rgb([x as u8, y as u8, 9])));
        }
        let bank = build_rare_instance_bank(&ds, &store).unwrap();
        assert_eq!(bank.len(), 3);
        for (e, a) in bank.iter().zip(ds.annotations()) {
            assert_eq!((e.patch.width() as f64, e.patch.height() as f64), (a.bbox.w, a.bbox.h));
            assert_eq!(e.patch.get_pixel(0, 0), &Rgb([a.bbox.x as u8, a.bbox.y as u8, 9]));
        }
    }

    #[test]
    fn empty_tail_is_an_error() {
        let ds = dataset(&[], &[1]);
        assert!(build_rare_instance_bank(&ds, &PixelStore::new()).is_err());
    }
}
