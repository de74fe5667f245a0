//! LT-Shapes: a synthetic long-tailed detection benchmark.
//!
//! Each class is a distinct (shape, hue) pair. Object classes are drawn from
//! a Zipf law `p(c) ∝ c^-s`, so class 1 dominates and high ids are rare.
//! Every image is generated from its own seeded stream, which keeps output
//! independent of worker count.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::*;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
}

pub const SHAPES: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross, Shape::Ring];
pub const HUE_NAMES: [&str; 8] = ["red", "orange", "yellow", "green", "cyan", "azure", "blue", "magenta"];
/// Distinct (shape, hue) combinations available as classes.
pub const MAX_CLASSES: usize = SHAPES.len() * HUE_NAMES.len();
const MAX_OBJECTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub zipf_s: f64,
    pub num_images: usize,
    pub num_val: usize,
    /// `(height, width)`
    pub image_size: (u32, u32),
    pub objects_per_image: (usize, usize),
    /// Side length range of an object's nominal box.
    pub object_size: (u32, u32),
    pub unlabeled_count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 20,
            zipf_s: 1.5,
            num_images: 1200,
            num_val: 300,
            image_size: (128, 128),
            objects_per_image: (1, 6),
            object_size: (16, 40),
            unlabeled_count: 2000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > MAX_CLASSES {
            return bad(format!(
                "num_classes {} exceeds the {MAX_CLASSES} distinct shape x hue combinations",
                self.num_classes
            ));
        }
        if self.num_images == 0 {
            return bad("num_images must be >= 1".into());
        }
        if !(self.zipf_s.is_finite() && self.zipf_s >= 0.0) {
            return bad(format!("zipf_s must be finite and >= 0, got {}", self.zipf_s));
        }
        let (lo, hi) = self.objects_per_image;
        if lo > hi || hi > MAX_OBJECTS {
            return bad(format!("objects_per_image range {lo}..={hi} is invalid"));
        }
        let (smin, smax) = self.object_size;
        let (h, w) = self.image_size;
        if smin < 4 || smin > smax || smax > h.min(w) {
            return bad(format!("object_size {smin}..={smax} does not fit a {h}x{w} image"));
        }
        Ok(())
    }

    pub fn class_shape(&self, id: CategoryId) -> (Shape, usize) {
        class_appearance(id)
    }

    pub fn categories(&self) -> Vec<Category> {
        (1..=self.num_classes as u32)
            .map(|c| {
                let (shape, hue) = class_appearance(CategoryId(c));
                Category { id: CategoryId(c), name: format!("{}_{:?}", HUE_NAMES[hue], shape).to_lowercase() }
            })
            .collect()
    }
}

/// Class `c` maps to shape `(c-1) mod 5` and hue `(c-1) mod 8`; since 5 and 8
/// are coprime every class below 40 gets a distinct pair, and consecutive
/// classes differ in both shape and hue.
pub fn class_appearance(id: CategoryId) -> (Shape, usize) {
    let idx = (id.0 as usize).saturating_sub(1);
    (SHAPES[idx % SHAPES.len()], idx % HUE_NAMES.len())
}

/// Zipf probability mass over classes `1..=n`.
pub fn zipf_pmf(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|c| (c as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn hue_rgb(hue: usize) -> [u8; 3] {
    hsv_to_rgb(hue as f64 * 360.0 / HUE_NAMES.len() as f64, 0.85, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0).round() as u8, ((g + m) * 255.0).round() as u8, ((b + m) * 255.0).round() as u8]
}

/// Pixel mask of `shape` inside a `w x h` nominal box, row-major.
pub fn shape_mask(shape: Shape, w: u32, h: u32) -> Vec<bool> {
    let (wf, hf) = (w as f64, h as f64);
    let (cx, cy) = (wf / 2.0, hf / 2.0);
    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let ex = (px - cx) / (wf / 2.0);
            let ey = (py - cy) / (hf / 2.0);
            let r2 = ex * ex + ey * ey;
            let inside = match shape {
                Shape::Square => true,
                Shape::Circle => r2 <= 1.0,
                Shape::Ring => r2 <= 1.0 && r2 >= 0.55 * 0.55,
                Shape::Triangle => {
                    // apex at top centre, base along the bottom edge
                    let t = py / hf;
                    (px - cx).abs() <= t * wf / 2.0
                }
                Shape::Cross => {
                    ((px - cx).abs() <= wf / 6.0) || ((py - cy).abs() <= hf / 6.0)
                }
            };
            mask[(y * w + x) as usize] = inside;
        }
    }
    mask
}

/// Generator-side record of one rendered object.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedObject {
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub area: f64,
}

fn sample_class(cdf: &[f64], rng: &mut Rng) -> CategoryId {
    let u: f64 = rng.random();
    let idx = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
    CategoryId(idx as u32 + 1)
}

fn render_image(spec: &SynthSpec, cdf: &[f64], image_id: ImageId) -> (RgbImage, Vec<RenderedObject>) {
    let mut rng = rng_for(spec.seed, &[0x4c54_5348, image_id.0]);
    let (h, w) = spec.image_size;
    let base: i32 = rng.random_range(30..=90);
    let tint: [i32; 3] = [rng.random_range(-10..=10), rng.random_range(-10..=10), rng.random_range(-10..=10)];
    let mut img = RgbImage::new(w, h);
    for p in img.pixels_mut() {
        let n: i32 = rng.random_range(-6..=6);
        *p = Rgb([
            (base + tint[0] + n).clamp(0, 255) as u8,
            (base + tint[1] + n).clamp(0, 255) as u8,
            (base + tint[2] + n).clamp(0, 255) as u8,
        ]);
    }

    let n_obj = rng.random_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let mut placed: Vec<BBox> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..n_obj {
        let cat = sample_class(cdf, &mut rng);
        let (smin, smax) = spec.object_size;
        let bw = rng.random_range(smin..=smax);
        let bh = rng.random_range(smin..=smax).clamp((bw * 2 / 3).max(smin), (bw * 3 / 2).min(smax));
        let mut spot = None;
        for _ in 0..50 {
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            let cand = BBox::new(x0 as f64, y0 as f64, bw as f64, bh as f64);
            let padded = BBox::new(cand.x - 2.0, cand.y - 2.0, cand.w + 4.0, cand.h + 4.0);
            if placed.iter().all(|p| p.intersection(&padded) == 0.0) {
                spot = Some((x0, y0));
                break;
            }
        }
        let Some((x0, y0)) = spot else { continue };
        let (shape, hue) = class_appearance(cat);
        let color = hue_rgb(hue);
        let jitter: i32 = rng.random_range(-12..=12);
        let color = Rgb(color.map(|c| (c as i32 + jitter).clamp(0, 255) as u8));
        let mask = shape_mask(shape, bw, bh);
        let (mut mx0, mut my0, mut mx1, mut my1) = (u32::MAX, u32::MAX, 0, 0);
        let mut area = 0usize;
        for y in 0..bh {
            for x in 0..bw {
                if mask[(y * bw + x) as usize] {
                    img.put_pixel(x0 + x, y0 + y, color);
                    mx0 = mx0.min(x);
                    my0 = my0.min(y);
                    mx1 = mx1.max(x);
                    my1 = my1.max(y);
                    area += 1;
                }
            }
        }
        if area == 0 {
            continue;
        }
        placed.push(BBox::new(x0 as f64, y0 as f64, bw as f64, bh as f64));
        objects.push(RenderedObject {
            category_id: cat,
            bbox: BBox::new((x0 + mx0) as f64, (y0 + my0) as f64, (mx1 - mx0 + 1) as f64, (my1 - my0 + 1) as f64),
            area: area as f64,
        });
    }
    (img, objects)
}

fn render_split(
    spec: &SynthSpec,
    ids: std::ops::RangeInclusive<u64>,
) -> (Vec<ImageRecord>, Vec<InstanceAnnotation>, PixelStore) {
    let cdf: Vec<f64> = zipf_pmf(spec.num_classes, spec.zipf_s)
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let rendered: Vec<(u64, RgbImage, Vec<RenderedObject>)> = ids
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|id| {
            let (img, objs) = render_image(spec, &cdf, ImageId(id));
            (id, img, objs)
        })
        .collect();
    let (h, w) = spec.image_size;
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut store = PixelStore::new();
    for (id, img, objs) in rendered {
        images.push(ImageRecord { id: ImageId(id), width: w, height: h, file_name: format!("{id:06}.png") });
        for (j, o) in objs.into_iter().enumerate() {
            anns.push(InstanceAnnotation {
                id: id * MAX_OBJECTS as u64 + j as u64,
                image_id: ImageId(id),
                category_id: o.category_id,
                bbox: o.bbox,
                area: o.area,
                source: InstanceSource::Original,
                ignore: false,
            });
        }
        store.insert(ImageId(id), img);
    }
    (images, anns, store)
}

/// Labeled train and val splits with their pixels.
#[derive(Debug, Clone)]
pub struct LtShapes {
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub store: PixelStore,
}

/// Unlabeled pool plus the generator-side labels, kept only for diagnostics.
#[derive(Debug, Clone)]
pub struct UnlabeledPool {
    pub index: DatasetIndex,
    pub store: PixelStore,
    pub hidden: Vec<InstanceAnnotation>,
}

/// Train ids are `1..=num_images`, val ids follow, so the splits never share ids.
pub fn generate_longtail_dataset(spec: &SynthSpec) -> Result<LtShapes> {
    spec.validate()?;
    let n = spec.num_images as u64;
    let v = spec.num_val as u64;
    let (ti, ta, mut store) = render_split(spec, 1..=n);
    let (vi, va, vstore) = render_split(spec, n + 1..=n + v);
    store.extend(vstore);
    let cats = spec.categories();
    Ok(LtShapes {
        train: DatasetIndex::new(ti, ta, cats.clone(), DatasetRole::Labeled)?,
        val: DatasetIndex::new(vi, va, cats, DatasetRole::Labeled)?,
        store,
    })
}

/// Unlabeled ids start after the val split.
pub fn generate_unlabeled_pool(spec: &SynthSpec) -> Result<UnlabeledPool> {
    spec.validate()?;
    let start = (spec.num_images + spec.num_val) as u64 + 1;
    let end = start + spec.unlabeled_count as u64;
    let (images, hidden, store) = if spec.unlabeled_count == 0 {
        (Vec::new(), Vec::new(), PixelStore::new())
    } else {
        render_split(spec, start..=end - 1)
    };
    Ok(UnlabeledPool {
        index: DatasetIndex::new(images, Vec::new(), spec.categories(), DatasetRole::Unlabeled)?,
        store,
        hidden,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub train: String,
    pub val: String,
    pub unlabeled: String,
    pub image_dir: String,
}

/// Write annotation documents, PNG images and a manifest under `dir`.
pub fn write_benchmark(dir: &Path, spec: &SynthSpec, data: &LtShapes, pool: &UnlabeledPool) -> Result<()> {
    let images = dir.join("images");
    save_dataset(&data.train, dir.join("train.json"))?;
    save_dataset(&data.val, dir.join("val.json"))?;
    save_dataset(&pool.index, dir.join("unlabeled.json"))?;
    data.store.save_dir(&data.train, &images)?;
    data.store.save_dir(&data.val, &images)?;
    pool.store.save_dir(&pool.index, &images)?;
    let manifest = SynthManifest {
        spec: spec.clone(),
        train: "train.json".into(),
        val: "val.json".into(),
        unlabeled: "unlabeled.json".into(),
        image_dir: "images".into(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Read back a directory written by [`write_benchmark`]. Hidden unlabeled
/// labels are not persisted.
pub fn load_benchmark(dir: &Path) -> Result<(SynthSpec, LtShapes, UnlabeledPool)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: SynthManifest =
        serde_json::from_str(&text).map_err(|e| Error::Malformed { path: path.clone(), message: e.to_string() })?;
    let train = load_dataset(dir.join(&m.train))?;
    let val = load_dataset(dir.join(&m.val))?;
    let unl = load_dataset(dir.join(&m.unlabeled))?;
    let images = dir.join(&m.image_dir);
    let mut store = PixelStore::load_dir(&train, &images)?;
    store.extend(PixelStore::load_dir(&val, &images)?);
    let ustore = PixelStore::load_dir(&unl, &images)?;
    Ok((m.spec, LtShapes { train, val, store }, UnlabeledPool { index: unl, store: ustore, hidden: Vec::new() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec { num_images: 40, num_val: 10, unlabeled_count: 12, ..SynthSpec::default() }
    }

    #[test]
    fn appearance_pairs_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for c in 1..=MAX_CLASSES as u32 {
            let (s, h) = class_appearance(CategoryId(c));
            assert!(seen.insert((s as usize, h)));
        }
    }

    #[test]
    fn too_many_classes_is_rejected() {
        let spec = SynthSpec { num_classes: MAX_CLASSES + 1, ..small() };
        assert!(generate_longtail_dataset(&spec).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let a = generate_longtail_dataset(&small()).unwrap();
        let b = generate_longtail_dataset(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.store, b.store);
        let train_ids: std::collections::BTreeSet<_> = a.train.images().iter().map(|i| i.id).collect();
        assert!(a.val.images().iter().all(|i| !train_ids.contains(&i.id)));
    }

    #[test]
    fn stored_box_is_tight_around_rendered_colour() {
        let data = generate_longtail_dataset(&small()).unwrap();
        for a in data.train.annotations().iter().take(30) {
            let img = data.store.get(a.image_id).unwrap();
            let (x, y, w, h) = pixel_rect(&a.bbox, img.width(), img.height());
            assert_eq!((w as f64, h as f64), (a.bbox.w, a.bbox.h));
            assert!(x + w <= img.width() && y + h <= img.height());
        }
    }

    #[test]
    fn empty_unlabeled_pool() {
        let spec = SynthSpec { unlabeled_count: 0, ..small() };
        let pool = generate_unlabeled_pool(&spec).unwrap();
        assert!(pool.index.is_empty());
        assert_eq!(pool.index.role(), DatasetRole::Unlabeled);
    }

    #[test]
    fn benchmark_round_trips_through_disk() {
        let spec = SynthSpec { num_images: 6, num_val: 2, unlabeled_count: 3, ..SynthSpec::default() };
        let data = generate_longtail_dataset(&spec).unwrap();
        let pool = generate_unlabeled_pool(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &spec, &data, &pool).unwrap();
        let (spec2, data2, pool2) = load_benchmark(dir.path()).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(data2.train, data.train);
        assert_eq!(data2.store, data.store);
        assert_eq!(pool2.index, pool.index);
    }
}
