use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::CUTOUT_FILL;
use crate::dataset::BBox;

/// Forward map from input to output pixel coordinates:
/// `x' = m[0] x + m[1] y + m[2]`, `y' = m[3] x + m[4] y + m[5]`.
/// The output canvas keeps the input `size` (width, height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub m: [f64; 6],
    pub size: (u32, u32),
}

impl Affine {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.m;
        let det = m[0] * m[4] - m[1] * m[3];
        let (a, b, d, e) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
        Affine { m: [a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])], size: self.size }
    }
}

/// Rotation then shear about the image center, followed by a translation.
/// Angles are in degrees; `tx`, `ty` in pixels.
pub fn affine_about_center(w: u32, h: u32, rot: f64, shear_x: f64, shear_y: f64, tx: f64, ty: f64) -> Affine {
    let (s, c) = rot.to_radians().sin_cos();
    let (kx, ky) = (shear_x.to_radians().tan(), shear_y.to_radians().tan());
    // R * Sh
    let a = [c - s * ky, c * kx - s, s + c * ky, s * kx + c];
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let m = [
        a[0],
        a[1],
        cx + tx - a[0] * cx - a[1] * cy,
        a[2],
        a[3],
        cy + ty - a[2] * cx - a[3] * cy,
    ];
    Affine { m, size: (w, h) }
}

fn hull(t: &Affine, b: &BBox) -> BBox {
    let pts = [(b.x, b.y), (b.x2(), b.y), (b.x, b.y2()), (b.x2(), b.y2())].map(|(x, y)| t.apply(x, y));
    let (mut x1, mut y1, mut x2, mut y2) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
    }
    BBox::from_corners(x1, y1, x2, y2)
}

/// Axis-aligned hull of the transformed corners, clipped to `w x h`.
/// `None` when less than `min_visible` of the hull area survives clipping.
pub fn transform_box(t: &Affine, b: &BBox, w: u32, h: u32, min_visible: f64) -> Option<BBox> {
    let full = hull(t, b);
    let clipped = full.clip(w as f64, h as f64)?;
    (clipped.area() >= min_visible * full.area()).then_some(clipped)
}

/// Hull of the inverse-mapped corners, clipped to the input canvas.
pub fn inverse_transform_box(t: &Affine, b: &BBox) -> Option<BBox> {
    hull(&t.inverse(), b).clip(t.size.0 as f64, t.size.1 as f64)
}

/// Bilinear inverse warp; samples falling off the input use the cutout fill.
pub fn warp_affine(img: &RgbImage, t: &Affine) -> RgbImage {
    let inv = t.inverse();
    let (w, h) = img.dimensions();
    let (wf, hf) = (w as f64, h as f64);
    RgbImage::from_fn(t.size.0, t.size.1, |x, y| {
        let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
        if sx < 0.0 || sy < 0.0 || sx > wf || sy > hf {
            return Rgb(CUTOUT_FILL);
        }
        let u = (sx - 0.5).clamp(0.0, wf - 1.0);
        let v = (sy - 0.5).clamp(0.0, hf - 1.0);
        let (x0, y0) = (u.floor() as u32, v.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let px = |xx, yy| img.get_pixel(xx, yy).0;
        let (p00, p10, p01, p11) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bot = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}
