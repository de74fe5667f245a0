//! Weak/strong augmentation views, copy-paste and rare-instance pasting.
//!
//! Every transform is recorded as an [`AugOp`] carrying its sampled
//! parameters; [`replay`] folds a log over the original sample and reproduces
//! the output bit-exactly.

mod geometric;
mod paste;
pub mod photometric;

pub use geometric::{affine_about_center, inverse_transform_box, transform_box, warp_affine, Affine};
pub use paste::{paste_rare_instances, simple_copy_paste, CopyPasteConfig, PasteItem};

use image::{imageops, RgbImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, ImageId, InstanceAnnotation};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_IMAGE_SIDE: u32 = 8;
pub const CUTOUT_FILL: [u8; 3] = [127, 127, 127];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    WeakSupervised,
    StrongUnlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Photometric {
    Autocontrast,
    Equalize,
    Solarize,
    Color,
    Contrast,
    Brightness,
    Sharpness,
    Posterize,
}

impl Photometric {
    pub const ALL: [Photometric; 8] = [
        Photometric::Autocontrast,
        Photometric::Equalize,
        Photometric::Solarize,
        Photometric::Color,
        Photometric::Contrast,
        Photometric::Brightness,
        Photometric::Sharpness,
        Photometric::Posterize,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugPolicy {
    pub view: View,
    /// Inclusive short-edge interval; `(0, 0)` keeps the native size.
    pub resize_short_edge_range: (u32, u32),
    pub flip_prob: f64,
    /// Maximum translation as a fraction of each dimension.
    pub translation_range: f64,
    pub shear_range: f64,
    pub rotation_range: f64,
    pub cutout_count_range: (u32, u32),
    pub cutout_size_range: (f64, f64),
    /// Per-op probability, indexed like [`Photometric::ALL`].
    pub photometric_probs: [f64; 8],
    /// Boxes keeping less than this fraction of their area are dropped.
    pub min_visible: f64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self::weak()
    }
}

impl AugPolicy {
    pub fn weak() -> Self {
        AugPolicy {
            view: View::WeakSupervised,
            resize_short_edge_range: (96, 160),
            flip_prob: 0.5,
            translation_range: 0.0,
            shear_range: 0.0,
            rotation_range: 0.0,
            cutout_count_range: (0, 0),
            cutout_size_range: (0.0, 0.0),
            photometric_probs: [0.3; 8],
            min_visible: 0.25,
        }
    }

    pub fn strong() -> Self {
        AugPolicy {
            view: View::StrongUnlabeled,
            translation_range: 0.1,
            shear_range: 30.0,
            rotation_range: 30.0,
            cutout_count_range: (1, 5),
            cutout_size_range: (0.0, 0.2),
            ..Self::weak()
        }
    }

    /// No-op policy: native size, no flip, no photometric or geometric ops.
    pub fn identity() -> Self {
        AugPolicy {
            resize_short_edge_range: (0, 0),
            flip_prob: 0.0,
            photometric_probs: [0.0; 8],
            ..Self::weak()
        }
    }

    pub fn has_geometric(&self) -> bool {
        self.translation_range > 0.0
            || self.shear_range > 0.0
            || self.rotation_range > 0.0
            || self.cutout_count_range.1 > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("augmentation policy: {m}")));
        if self.view == View::WeakSupervised && self.has_geometric() {
            return bad("weak view must not enable translation, shear, rotation or cutout");
        }
        let (lo, hi) = self.resize_short_edge_range;
        if (lo, hi) != (0, 0) && (lo < MIN_IMAGE_SIDE || lo > hi) {
            return bad("resize range must be (0, 0) or satisfy 8 <= lo <= hi");
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.flip_prob) || !self.photometric_probs.iter().all(|&p| prob(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..=0.5).contains(&self.translation_range)
            || !(0.0..90.0).contains(&self.shear_range)
            || !(0.0..=180.0).contains(&self.rotation_range)
        {
            return bad("geometric range out of bounds");
        }
        let (c0, c1) = self.cutout_count_range;
        let (s0, s1) = self.cutout_size_range;
        if c0 > c1 || !(0.0..=1.0).contains(&s0) || !(s0..=1.0).contains(&s1) {
            return bad("cutout ranges must be ordered, sizes within [0, 1]");
        }
        if !prob(self.min_visible) {
            return bad("min_visible must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One recorded transform with its sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    /// Sizes are `(width, height)`.
    Resize { from: (u32, u32), to: (u32, u32) },
    HFlip { width: u32 },
    Autocontrast,
    Equalize,
    Solarize { threshold: u8 },
    Color { factor: f64 },
    Contrast { factor: f64 },
    Brightness { factor: f64 },
    Sharpness { factor: f64 },
    Posterize { bits: u8 },
    Affine { transform: Affine, min_visible: f64 },
    Cutout { rects: Vec<(u32, u32, u32, u32)> },
    CopyPaste { items: Vec<PasteItem>, occlusion_ignore: f64 },
    RarePaste { items: Vec<PasteItem> },
    /// Annotation ids removed by the preceding geometric op; informational.
    Dropped { annotation_ids: Vec<u64> },
}

impl AugOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugOp::Resize { .. } => "resize",
            AugOp::HFlip { .. } => "hflip",
            AugOp::Autocontrast => "autocontrast",
            AugOp::Equalize => "equalize",
            AugOp::Solarize { .. } => "solarize",
            AugOp::Color { .. } => "color",
            AugOp::Contrast { .. } => "contrast",
            AugOp::Brightness { .. } => "brightness",
            AugOp::Sharpness { .. } => "sharpness",
            AugOp::Posterize { .. } => "posterize",
            AugOp::Affine { .. } => "affine",
            AugOp::Cutout { .. } => "cutout",
            AugOp::CopyPaste { .. } => "copy_paste",
            AugOp::RarePaste { .. } => "rare_paste",
            AugOp::Dropped { .. } => "dropped",
        }
    }

    pub fn is_photometric(&self) -> bool {
        matches!(
            self,
            AugOp::Autocontrast
                | AugOp::Equalize
                | AugOp::Solarize { .. }
                | AugOp::Color { .. }
                | AugOp::Contrast { .. }
                | AugOp::Brightness { .. }
                | AugOp::Sharpness { .. }
                | AugOp::Posterize { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image_id: ImageId,
    pub pixels: RgbImage,
    pub annotations: Vec<InstanceAnnotation>,
    pub op_log: Vec<AugOp>,
}

impl AugmentedSample {
    pub fn new(image_id: ImageId, pixels: RgbImage, annotations: Vec<InstanceAnnotation>) -> Self {
        AugmentedSample { image_id, pixels, annotations, op_log: Vec::new() }
    }

    pub fn size(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    /// Apply `op`, append it (and any resulting drop record) to the log.
    pub fn push(&mut self, op: AugOp) {
        let dropped = apply_op(self.image_id, &mut self.pixels, &mut self.annotations, &op);
        self.op_log.push(op);
        if !dropped.is_empty() {
            self.op_log.push(AugOp::Dropped { annotation_ids: dropped });
        }
    }
}

fn check_size(img: &RgbImage) -> Result<()> {
    let (w, h) = img.dimensions();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::InvalidArgument(format!(
            "degenerate image {w}x{h}: both sides must be at least {MIN_IMAGE_SIDE} px"
        )));
    }
    Ok(())
}

fn scale_annotation(a: &mut InstanceAnnotation, sx: f64, sy: f64) {
    a.bbox = BBox::new(a.bbox.x * sx, a.bbox.y * sy, a.bbox.w * sx, a.bbox.h * sy);
    a.area *= sx * sy;
}

/// Apply one op in place; returns ids of annotations it dropped.
fn apply_op(image_id: ImageId, img: &mut RgbImage, anns: &mut Vec<InstanceAnnotation>, op: &AugOp) -> Vec<u64> {
    match op {
        AugOp::Resize { from, to } => {
            *img = imageops::resize(img, to.0, to.1, imageops::FilterType::Triangle);
            let sx = to.0 as f64 / from.0 as f64;
            let sy = to.1 as f64 / from.1 as f64;
            anns.iter_mut().for_each(|a| scale_annotation(a, sx, sy));
        }
        AugOp::HFlip { width } => {
            imageops::flip_horizontal_in_place(img);
            let w = *width as f64;
            for a in anns.iter_mut() {
                a.bbox.x = w - a.bbox.x - a.bbox.w;
            }
        }
        AugOp::Autocontrast => photometric::autocontrast(img),
        AugOp::Equalize => photometric::equalize(img),
        AugOp::Solarize { threshold } => photometric::solarize(img, *threshold),
        AugOp::Color { factor } => photometric::color(img, *factor),
        AugOp::Contrast { factor } => photometric::contrast(img, *factor),
        AugOp::Brightness { factor } => photometric::brightness(img, *factor),
        AugOp::Sharpness { factor } => photometric::sharpness(img, *factor),
        AugOp::Posterize { bits } => photometric::posterize(img, *bits),
        AugOp::Affine { transform, min_visible } => {
            *img = warp_affine(img, transform);
            let (w, h) = img.dimensions();
            let mut dropped = Vec::new();
            anns.retain_mut(|a| match transform_box(transform, &a.bbox, w, h, *min_visible) {
                Some(b) => {
                    let fill = if a.bbox.area() > 0.0 { a.area / a.bbox.area() } else { 1.0 };
                    a.bbox = b;
                    a.area = b.area() * fill;
                    true
                }
                None => {
                    dropped.push(a.id);
                    false
                }
            });
            return dropped;
        }
        AugOp::Cutout { rects } => {
            for &(x, y, w, h) in rects {
                for yy in y..(y + h).min(img.height()) {
                    for xx in x..(x + w).min(img.width()) {
                        img.put_pixel(xx, yy, image::Rgb(CUTOUT_FILL));
                    }
                }
            }
        }
        AugOp::CopyPaste { items, occlusion_ignore } => paste::apply_copy_paste(image_id, img, anns, items, *occlusion_ignore),
        AugOp::RarePaste { items } => {
            for it in items {
                it.draw(img);
            }
        }
        AugOp::Dropped { .. } => {}
    }
    Vec::new()
}

/// Re-apply a recorded op log to the original sample.
pub fn replay(original: &AugmentedSample, ops: &[AugOp]) -> AugmentedSample {
    let mut out = original.clone();
    for op in ops {
        if !matches!(op, AugOp::Dropped { .. }) {
            out.push(op.clone());
        }
    }
    out
}

fn sample_weak_ops(sample: &mut AugmentedSample, policy: &AugPolicy, rng: &mut Rng) {
    let (lo, hi) = policy.resize_short_edge_range;
    if (lo, hi) != (0, 0) {
        let (w, h) = sample.size();
        let short = rng.random_range(lo..=hi);
        let scale = short as f64 / w.min(h) as f64;
        let to = if w <= h {
            (short, ((h as f64 * scale).round() as u32).max(1))
        } else {
            (((w as f64 * scale).round() as u32).max(1), short)
        };
        if to != (w, h) {
            sample.push(AugOp::Resize { from: (w, h), to });
        }
    }
    if policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob) {
        let width = sample.size().0;
        sample.push(AugOp::HFlip { width });
    }
    for (kind, &p) in Photometric::ALL.iter().zip(&policy.photometric_probs) {
        if p <= 0.0 || !rng.random_bool(p) {
            continue;
        }
        let op = match kind {
            Photometric::Autocontrast => AugOp::Autocontrast,
            Photometric::Equalize => AugOp::Equalize,
            Photometric::Solarize => AugOp::Solarize { threshold: rng.random_range(128..=255) },
            Photometric::Color => AugOp::Color { factor: rng.random_range(0.5..1.5) },
            Photometric::Contrast => AugOp::Contrast { factor: rng.random_range(0.5..1.5) },
            Photometric::Brightness => AugOp::Brightness { factor: rng.random_range(0.5..1.5) },
            Photometric::Sharpness => AugOp::Sharpness { factor: rng.random_range(0.0..2.0) },
            Photometric::Posterize => AugOp::Posterize { bits: rng.random_range(4..=8) },
        };
        sample.push(op);
    }
}

fn symmetric(rng: &mut Rng, r: f64) -> f64 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

fn sample_geometric_ops(sample: &mut AugmentedSample, policy: &AugPolicy, rng: &mut Rng) {
    let (w, h) = sample.size();
    let tx = symmetric(rng, policy.translation_range) * w as f64;
    let ty = symmetric(rng, policy.translation_range) * h as f64;
    let shx = symmetric(rng, policy.shear_range);
    let shy = symmetric(rng, policy.shear_range);
    let rot = symmetric(rng, policy.rotation_range);
    if tx != 0.0 || ty != 0.0 || shx != 0.0 || shy != 0.0 || rot != 0.0 {
        let transform = affine_about_center(w, h, rot, shx, shy, tx, ty);
        sample.push(AugOp::Affine { transform, min_visible: policy.min_visible });
    }
    let (c0, c1) = policy.cutout_count_range;
    if c1 == 0 {
        return;
    }
    let n = rng.random_range(c0..=c1);
    let (s0, s1) = policy.cutout_size_range;
    let rects: Vec<_> = (0..n)
        .filter_map(|_| {
            let s = if s1 > s0 { rng.random_range(s0..=s1) } else { s0 };
            let cw = (s * w as f64).floor() as u32;
            let ch = (s * h as f64).floor() as u32;
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            (cw > 0 && ch > 0).then_some((x, y, cw, ch))
        })
        .collect();
    if !rects.is_empty() {
        sample.push(AugOp::Cutout { rects });
    }
}

/// Resize, flip and photometric ops. Boxes move only under resize and flip.
pub fn apply_weak(sample: &AugmentedSample, policy: &AugPolicy, rng: &mut Rng) -> Result<AugmentedSample> {
    check_size(&sample.pixels)?;
    let mut out = sample.clone();
    sample_weak_ops(&mut out, policy, rng);
    Ok(out)
}

/// The weak ops followed by translation/shear/rotation and cutout.
pub fn apply_strong(sample: &AugmentedSample, policy: &AugPolicy, rng: &mut Rng) -> Result<AugmentedSample> {
    check_size(&sample.pixels)?;
    let mut out = sample.clone();
    sample_weak_ops(&mut out, policy, rng);
    sample_geometric_ops(&mut out, policy, rng);
    Ok(out)
}

/// Map a box through `ops` (forward direction). `None` if an op drops it.
pub fn map_box_forward(ops: &[AugOp], bbox: &BBox) -> Option<BBox> {
    let mut b = *bbox;
    for op in ops {
        b = match op {
            AugOp::Resize { from, to } => {
                let (sx, sy) = (to.0 as f64 / from.0 as f64, to.1 as f64 / from.1 as f64);
                BBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
            }
            AugOp::HFlip { width } => BBox::new(*width as f64 - b.x - b.w, b.y, b.w, b.h),
            AugOp::Affine { transform, min_visible } => {
                let (w, h) = transform.size;
                transform_box(transform, &b, w, h, *min_visible)?
            }
            _ => b,
        };
    }
    Some(b)
}

/// Map a box from the output frame of `ops` back to their input frame.
pub fn map_box_inverse(ops: &[AugOp], bbox: &BBox) -> Option<BBox> {
    let mut b = *bbox;
    for op in ops.iter().rev() {
        b = match op {
            AugOp::Resize { from, to } => {
                let (sx, sy) = (from.0 as f64 / to.0 as f64, from.1 as f64 / to.1 as f64);
                BBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
            }
            AugOp::HFlip { width } => BBox::new(*width as f64 - b.x - b.w, b.y, b.w, b.h),
            AugOp::Affine { transform, .. } => inverse_transform_box(transform, &b)?,
            _ => b,
        };
    }
    Some(b)
}
